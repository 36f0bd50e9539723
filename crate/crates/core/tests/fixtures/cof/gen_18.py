import sys
from collections import deque

def check(
    a,
    b=2,
):
    return 0


LIMIT = (
    100
)
# trailing note

def bfs(a, b) -> int:
    '''bfs helper.'''
    total = 0
    for x in range(3):
        total += x
    return total


# section comment
def dfs():
    s = '''
def hidden():
    pass
'''
    return s


main()
