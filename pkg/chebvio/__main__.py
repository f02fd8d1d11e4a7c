"""
This is the main file for chebvio.
`python -m chebvio` runs the command line.
"""

from .cli import main

if __name__ == '__main__':
    main()
