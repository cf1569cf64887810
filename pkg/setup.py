import re
from setuptools import setup


with open('requirements.txt', 'r') as requirements_file:
    requirements = requirements_file.read().splitlines()


with open('bilevel_obstacle/__init__.py', 'r') as version_file:
    version = re.search(r'__version__\s*=\s*[\'"]([^\'"]*)[\'"]', version_file.read(), re.MULTILINE).group(1)  # type: ignore


with open('README.rst', 'r') as rm:
    readme = rm.read()


# fmt: off
packages = [
    'bilevel_obstacle'
    ]


extras_require = {
    'docs': [
        'sphinx-press-theme'
        ],
    'test': [
        'pytest'
        ]
    }
# fmt: on

setup(
    name='bilevel-obstacle',
    author='The Master',
    version=version,
    packages=packages,
    license='MIT',
    description='Mesh-free bilevel optimal control of obstacle problems with neural networks.',
    long_description=readme,
    long_description_content_type='text/x-rst',
    include_package_data=True,
    install_requires=requirements,
    extras_require=extras_require,
    entry_points={
        'console_scripts': [
            'bilevel-obstacle = bilevel_obstacle.cli:main',
        ],
    },
    python_requires='>=3.9.0',
    classifiers=[
        'Development Status :: 4 - Beta',
        'License :: OSI Approved :: MIT License',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Typing :: Typed',
    ],
)
