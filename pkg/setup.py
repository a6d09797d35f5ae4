from setuptools import setup, find_packages

setup(
    name="unigrec",
    version="1.0.0",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=[
        "torch>=2.0",
        "numpy>=1.24",
        "pandas>=2.0",
        "matplotlib==3.7.2",
        "tqdm>=4.65",
    ],
    entry_points={
        "console_scripts": [
            "unigrec=src.cli:main",
        ],
    },
)
