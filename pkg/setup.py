from setuptools import setup, find_packages

setup(
    name="fracsource",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.12",
        "pydantic>=2",
        "PyYAML",
    ],
    extras_require={
        "dev": [
            "pytest",
            "pytest-cov",
        ],
    },
    entry_points={
        "console_scripts": [
            # forward / moments / invert / verify / basis / study
            "fracsource = fracsource.cli:main",
        ],
    },
)
