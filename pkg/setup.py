"""Package setup for Bias Audit Engine."""

from setuptools import setup, find_packages

setup(
    name="bias-audit-engine",
    version="1.0.0",
    description="Bias audits for automated employment decision tools",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"bias_audit": ["data/*.csv", "data/*.yaml"]},
    python_requires=">=3.10",
    install_requires=[
        "rich>=13.0",
        "pandas>=2.0",
        "numpy>=1.24",
        "scipy>=1.10",
        "requests>=2.31",
        "PyYAML>=6.0",
    ],
    extras_require={
        "test": ["pytest>=7.0", "hypothesis>=6.80"],
    },
    entry_points={
        "console_scripts": [
            "bias-audit=bias_audit.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Legal Industry",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Office/Business",
        "Topic :: Scientific/Engineering :: Information Analysis",
    ],
    keywords="bias-audit fairness four-fifths impact-ratio hiring census",
)
