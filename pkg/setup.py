"""Setup script for attribute-painter package."""
from setuptools import setup
import os

# Read the contents of README file
this_directory = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(this_directory, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

# Read requirements
with open(os.path.join(this_directory, 'requirements.txt'), encoding='utf-8') as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith('#')]

setup(
    name='attribute-painter',
    version='0.1.0',
    author='labgadget015-dotcom',
    description='Multi-attribute guided painting generation with an asymmetric cycle GAN',
    long_description=long_description,
    long_description_content_type='text/markdown',
    py_modules=[
        'painter_core',
        'config',
        'conditioning',
        'networks',
        'perceptual',
        'losses',
        'painting_data',
        'fixtures',
        'training',
        'evaluation',
        'cli',
    ],
    install_requires=requirements,
    python_requires='>=3.9',
    entry_points={
        'console_scripts': ['attribpaint=cli:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Processing',
    ],
    keywords='gan style-transfer adain painting image-translation',
)
