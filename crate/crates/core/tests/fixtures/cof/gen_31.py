import sys
@lru_cache(maxsize=None)
def main(a, b) -> int:
    x = 1 + \
        2
    # comment inside

    return x


LIMIT = (
    100
)
# trailing note

def build_graph():
    class Local:
        pass
    return Local()


main()