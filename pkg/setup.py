from setuptools import setup

setup(
    name="ivseg",
    packages=[
        "ivseg",
        "ivseg.autograd",
        "ivseg.data_processing",
        "ivseg.evaluation",
        "ivseg.model",
        "ivseg.nn",
        "ivseg.optimization",
        "ivseg.synthdata",
        "ivseg.training",
        "ivseg.utility",
    ],
    include_package_data=True,
    license="MIT",
    description="Instructed image and video segmentation on a from-scratch autodiff engine, at toy scale",
    long_description="",
    author="Dmitry Murashov",
    setup_requires=["wheel"],
    install_requires=[
        "numpy>=1.23.2",
        "pandas>=1.5.2",
        "scipy>=1.10.0",
        "pygal>=3.0.0",
    ],
    entry_points={
        "console_scripts": ["ivseg=ivseg.cli:main"],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    version="0.1.0",
)
