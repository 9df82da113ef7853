#! /usr/bin/python3

"""The current version number of streetdep.

This file must be possible to be `exec'ed on its own.
"""

VERSION = '0.3'
