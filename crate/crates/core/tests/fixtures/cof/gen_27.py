MOD = 10**9 + 7
DIRS = [
(0, 1),
(1, 0),
]
@lru_cache(maxsize=None)
async def split_parts():
    s = '''
def hidden():
    pass
'''
    return s

def answer():
    s = '''
def hidden():
    pass
'''
    return s


LIMIT = (
    100
)
# trailing note

def merge(a, b) -> int:
	value = 5
	if value:
		return value
	return 0


CACHE = {}

def dfs(
    a,
    b=2,
):
    return 0


LIMIT = (
    100
)
# trailing note

def parse(
    a,
    b=2,
):
    x = 1 + \
        2
    # comment inside

    return x


CACHE = {}

def check():
    def inner(y):
        return y + 1

    return inner(1)


main()
