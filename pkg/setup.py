from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="nbv-grasp-sim",
    version="0.1.0",
    author="algorithm07-ai",
    author_email="1459351107@qq.com",
    description="Closed-loop next-best-view grasp planning in a deterministic simulated world",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "examples*"]),
    py_modules=["main"],
    package_data={"src": ["templates/*.md", "scenarios/*.json"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.21.0",
        "scipy>=1.7.0",
        "pandas>=1.5.0",
        "jinja2>=3.0.0",
        "python-dotenv>=0.19.0",
        "markdown>=3.3.0",
        "chardet>=4.0.0",
    ],
    entry_points={
        "console_scripts": ["nbv-grasp-sim=main:main"],
    },
)
