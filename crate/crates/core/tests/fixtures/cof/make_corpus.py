"""Regenerates the decomposer fixture corpus.

Every file is checked with `ast.parse`; the expected step names are the
top-level function definitions reported by `ast`, written to expected.json.
"""

import ast
import json
import random
from pathlib import Path

HERE = Path(__file__).parent

PREAMBLES = [
    "import sys\n",
    "import sys\nfrom collections import deque\n\n",
    "#!/usr/bin/env python3\n# -*- coding: utf-8 -*-\nimport heapq\n\nINF = float('inf')\n",
    '"""Module docstring.\n\ndef not_a_step():\n    pass\n"""\nimport math\n',
    "",
    "from functools import lru_cache\nimport sys\nsys.setrecursionlimit(10 ** 6)\n\n\n",
    "MOD = 10**9 + 7\nDIRS = [\n(0, 1),\n(1, 0),\n]\n",
    "import sys\ninput = sys.stdin.readline\n",
]

BODIES = [
    "    return {args}\n",
    "    '''{name} helper.'''\n    total = 0\n    for x in range(3):\n        total += x\n    return total\n",
    '    """\n    Explain {name}.\ndef fake(x):\n    """\n    return None\n',
    "    def inner(y):\n        return y + 1\n\n    return inner(1)\n",
    "    s = '''\ndef hidden():\n    pass\n'''\n    return s\n",
    "    data = [\n1, 2,\n3,\n    ]\n    return sum(data)\n",
    "    x = 1 + \\\n        2\n    # comment inside\n\n    return x\n",
    "    text = \"# not a comment ( [ {\"\n    return text\n",
    "\tvalue = 5\n\tif value:\n\t\treturn value\n\treturn 0\n",
    "    class Local:\n        pass\n    return Local()\n",
]

NAMES = [
    "main", "solve", "build_graph", "dijkstra", "bfs", "dfs", "read_input", "parse",
    "helper", "count_ways", "gcd", "lcm", "check", "merge", "split_parts", "answer",
]

BETWEEN = [
    "\n\n",
    "\n",
    "\n\n# section comment\n",
    "\n\nCACHE = {}\n\n",
    "\n\n@lru_cache(maxsize=None)\n",
    "\n\nclass Point:\n    def __init__(self, x):\n        self.x = x\n\n",
    "\n\n# about the next one\n@staticmethod\n",
    "\n\nLIMIT = (\n    100\n)\n# trailing note\n\n",
]

EPILOGUES = [
    "\n\nif __name__ == '__main__':\n    main()\n",
    "\n\nmain()\n",
    "\n",
    "",
    "\n\n# entry point\nsolve()\n",
    "\n\nif __name__ == \"__main__\":\n    import sys\n    main()\n# end\n",
]


def signature(rng, name, is_async):
    prefix = "async def" if is_async else "def"
    if rng.random() < 0.2:
        return f"{prefix} {name}(\n    a,\n    b=2,\n):\n"
    if rng.random() < 0.2:
        return f"{prefix} {name}(a, b) -> int:\n"
    return f"{prefix} {name}():\n"


def program(rng):
    n_funcs = rng.randint(1, 6)
    names = rng.sample(NAMES, n_funcs)
    if "main" not in names and rng.random() < 0.5:
        names[0] = "main"
    out = [rng.choice(PREAMBLES)]
    for i, name in enumerate(names):
        if i > 0:
            out.append(rng.choice(BETWEEN))
        elif rng.random() < 0.3:
            out.append("@lru_cache(maxsize=None)\n")
        out.append(signature(rng, name, rng.random() < 0.1))
        out.append(rng.choice(BODIES).replace("{name}", name).replace("{args}", "0"))
    out.append(rng.choice(EPILOGUES))
    text = "".join(out)
    if rng.random() < 0.15:
        text = text.replace("\n", "\r\n")
    if rng.random() < 0.1:
        text = text.rstrip("\r\n")
    return text


def top_level_functions(text):
    tree = ast.parse(text)
    return [n.name for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]


def main():
    rng = random.Random(20240917)
    expected = {"alg_dijkstra.py": top_level_functions((HERE / "alg_dijkstra.py").read_text())}
    i = 0
    while len(expected) < 50:
        text = program(rng)
        try:
            names = top_level_functions(text)
        except SyntaxError:
            continue
        name = f"gen_{i:02d}.py"
        (HERE / name).write_bytes(text.encode())
        expected[name] = names
        i += 1
    (HERE / "expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
