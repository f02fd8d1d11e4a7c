from setuptools import setup, find_packages


setup(
    name='chebvio',
    version='1.0.0',
    license='MIT',
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    install_requires=[
        "numpy>=2.0",
        "scipy>=1.15",
        "pandas>=2.2",
        "PyYAML>=6.0",
        "toml>=0.10",
        "click>=8.1",
    ],
    entry_points={
        "console_scripts": ["chebvio=chebvio.cli:main"],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: MIT License",
        "Topic :: Scientific/Engineering",
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
    ],
)
