# Sphinx configuration for the kcenter documentation.
#
# Only the options that differ from the sphinx-quickstart defaults are set.

import os
import sys

import sphinx_rtd_theme  # noqa: F401

module_path = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                           '../../')
sys.path.insert(0, module_path)

from kcenter import __version__  # noqa: E402

project = 'kcenter'
author = 'kcenter developers'
copyright = f'2026, {author}'
version = __version__
release = __version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'numpydoc',
]
autosummary_generate = True
numpydoc_show_class_members = False

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = []
pygments_style = 'sphinx'

html_theme = 'sphinx_rtd_theme'
html_static_path = []
htmlhelp_basename = 'kcenterdoc'

man_pages = [
    (master_doc, 'kcenter', 'kcenter Documentation', [author], 1)
]
