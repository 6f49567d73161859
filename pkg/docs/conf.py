#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# Documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import gsqg_layercake


# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode'
]

templates_path = ['_templates']

source_suffix = '.rst'

master_doc = 'index'

project = 'gsqg-layercake'
copyright = '2026, gsqg-layercake developers'
author = 'gsqg-layercake developers'

# The short X.Y version.
version = '.'.join(gsqg_layercake.__version__.split('.')[:2])
# The full version, including alpha/beta/rc tags.
release = gsqg_layercake.__version__

language = 'en'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

pygments_style = 'sphinx'

todo_include_todos = False

autodoc_member_order = 'bysource'


# -- Options for HTML output ----------------------------------------------

html_theme = 'default'

html_static_path = []


# -- Options for HTMLHelp output ------------------------------------------

htmlhelp_basename = 'gsqglayercakedoc'


# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}

latex_documents = [
    (master_doc, 'gsqg_layercake.tex', 'gsqg-layercake Documentation',
     author, 'manual'),
]


# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'gsqg-layercake', 'gsqg-layercake Documentation',
     [author], 1)
]
