"""
This module defines the attributes of the
PyPI package for tune-tools
"""

from setuptools import setup, find_packages

DESCRIPTION = """Command line tools to tune the parameters of a simulator to reference data through
per-bin surrogate models. Observable weights are chosen by a bilevel search or by a
robust minimax formulation, and tunes are evaluated with posterior covariance based
metrics, eigentunes and cumulative chi2 curves."""

setup(name='tune-tools',
      version='0.1.0',
      description='Surrogate based tuning of simulator parameters',
      long_description=DESCRIPTION,
      author='The tune-tools authors',
      license='Apache-2.0',
      packages=find_packages(),
      package_data={'tunetools': ['templates/*.tmpl']},
      python_requires='>=3.8',
      install_requires=["numpy>=1.20", "scipy>=1.6", "PrettyTable>=0.7.2", "colorama>=0.3.3", "Jinja2>=2.7.3",
                        "pyYAML"],
      extras_require={'test': ["pytest"]},
      entry_points={'console_scripts': ['tune=tunetools.tune:main']})
