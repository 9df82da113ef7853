"""streetdep: street-level exercise deprivation analytics.

See the README.txt for more information.

Please import submodules to get the actual functionality. Example:

  from streetdep import config, pipeline
  cfg = config.load_config('run.yaml')
  pipeline.run_stage('synth', cfg)  # Writes a synthetic city to city/.
  pipeline.run_stage('all', cfg)
  print(open('run/report/report.txt').read())

The stages are also usable one by one on in-memory data:

  from streetdep import explain, gbdt, schema, typology
  table = schema.read_feature_table('run/features/features.csv')
  model = gbdt.load_model('run/train/model.txt')
  shap = explain.tree_shap(model, table.matrix(model.feature_names),
                           table.segment_ids)
  groups = explain.group_shap(shap, schema.TriadSchema.from_names(
      shap.feature_names))
  print(groups.format())
  result = typology.classify_typology(typology.deprivation_scores(groups))
  print(typology.label_counts(result))
"""
