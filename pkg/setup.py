from setuptools import setup
from os.path import join as pj

setup(name='Taxon',
      version='1.0.0',
      packages=['taxon'],
      scripts=[pj('bin', 'taxon')],
      package_data={'taxon': [pj('prompts', '*.txt')]},
      install_requires=['numpy', 'requests', 'tqdm'],
      extras_require={'test': ['pytest', 'hypothesis']},
      python_requires='>=3.11',
      license='GPL v3',
      long_description=open('README.md').read(),
      include_package_data=True)
