#!/usr/bin/env python3

import slpkit

project = 'slpkit'
copyright = '2026, The slpkit developers'
version = release = slpkit.__version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.intersphinx',
    'sphinx_rtd_theme',
]
autodoc_default_options = {
    'members': None,
    'member-order': 'bysource',
    'undoc-members': True,
}
intersphinx_mapping = {
        'python': ('https://docs.python.org/3', None),
        'numpy': ('https://numpy.org/doc/stable/', None),
        'pydantic': ('https://docs.pydantic.dev/latest/', None),
}

master_doc = 'index'
exclude_patterns = ['_build']
default_role = 'any'
pygments_style = 'sphinx'

html_theme = 'sphinx_rtd_theme'
