#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""A setuptools based setup module.

See:
https://packaging.python.org/en/latest/distributing.html
"""

from setuptools import setup, find_packages
from os import path
import re

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()


def find_version(*file_paths):
    """
    Reads version from a file. Version must be specified explicitly in the file as:
    __version__ = "<the version number string>"
    """
    with open(path.join(*file_paths), "r") as f:
        version_file = f.read()
    version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", version_file, re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError("Unable to find version string.")


setup(
    name='covthresh',
    version=find_version("covthresh", "__init__.py"),
    description='Covariance regularization by hard thresholding, with banding and shrinkage '
                'baselines, cross-validated tuning and simulation studies',
    long_description=long_description,
    long_description_content_type='text/markdown',
    license='BSD-3-Clause',

    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],

    keywords='covariance thresholding banding shrinkage cross-validation',

    packages=find_packages(exclude=['contrib', 'docs', 'tests', 'test']),

    python_requires='>=3.8',

    install_requires=['numpy', 'pandas', 'openpyxl'],
    tests_require=['pytest'],

    entry_points={
        'console_scripts': ['covthresh = covthresh.cli:main'],
    },
)
