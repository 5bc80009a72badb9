import setuptools

setuptools.setup(
    name="ddereach",
    version="0.1.0",
    author="Your Name",
    author_email="your.email@example.com",
    description="Over- and under-approximate reach sets of perturbed delay differential equations",
    url="https://github.com/yourusername/ddereach",
    keywords=["reachability", "delay differential equations", "interval arithmetic", "verification"],
    packages=setuptools.find_packages(exclude=('tests',)),
    package_data={'ddereach.models': ['*.dde']},
    install_requires=[
        'numpy>=1.16.3',
        'scipy>=1.5.0',
        'matplotlib>=3.0.3',
    ],
    extras_require={
        'test': ['hypothesis>=6.0', 'sympy>=1.5'],
    },
    entry_points={
        'console_scripts': ['ddereach = cli.main:main'],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.8',
)
