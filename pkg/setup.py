from codecs import open as codecs_open
from setuptools import setup, find_packages


# Get the long description from the relevant file
with codecs_open('README.rst', encoding='utf-8') as f:
    LONG_DESCRIPTION = f.read()


setup(
    name='aerial_depthseg',
    version='0.1',
    description='Joint depth estimation and semantic segmentation for '
                'aerial image sequences',
    long_description=LONG_DESCRIPTION,
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Operating System :: POSIX :: Linux',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Image Recognition',
    ],
    keywords='depth segmentation aerial uav pytorch',
    author='aerial_depthseg developers',
    license='GPLv3',
    packages=find_packages(exclude=['tests']),
    python_requires='>=3.9',
    install_requires=[
        'matplotlib',
        'numpy',
        'Pillow',
        'PyYAML',
        'torch>=1.13',
        'torchvision',
    ],
    extras_require={
        'test': ['pytest'],
    },
    entry_points="""
    [console_scripts]
    aerial-depthseg=aerial_depthseg.cli:main
    """
)
