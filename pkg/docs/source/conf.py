"""Sphinx configuration for the delegsim documentation."""

import os
import sys

sys.path.insert(0, os.path.abspath('../..'))

import sphinx_rtd_theme
from delegsim import __version__

project = 'delegsim'
copyright = '2026, delegsim developers'
author = 'delegsim developers'

version = '.'.join(__version__.split('.')[:2])
release = __version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.intersphinx',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
]

# the archive is optional at run time, docs build without a database driver
autodoc_mock_imports = ['psycopg2']

autosummary_generate = True
autodoc_member_order = 'groupwise'
autodoc_typehints = 'description'
autodoc_default_options = {
    'members': True,
    'show-inheritance': True,
}
napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_use_rtype = False

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'pandas': ('https://pandas.pydata.org/docs', None),
}

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = ['*/autosummary/*.rst']

language = 'en'
pygments_style = 'sphinx'
add_module_names = False
add_function_parentheses = False

html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_theme_options = {
    'navigation_depth': 2,
    'collapse_navigation': False,
}
html_title = f'delegsim {release}'
html_static_path = []
