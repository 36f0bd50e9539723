import sys
from collections import deque

@lru_cache(maxsize=None)
def answer():
	value = 5
	if value:
		return value
	return 0


@lru_cache(maxsize=None)
def lcm():
    data = [
1, 2,
3,
    ]
    return sum(data)


@lru_cache(maxsize=None)
def parse():
    s = '''
def hidden():
    pass
'''
    return s


# entry point
solve()
