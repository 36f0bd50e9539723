"""Module docstring.

def not_a_step():
    pass
"""
import math
def lcm():
    """
    Explain lcm.
def fake(x):
    """
    return None


if __name__ == "__main__":
    import sys
    main()
# end
