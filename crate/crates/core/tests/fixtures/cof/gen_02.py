#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import heapq

INF = float('inf')
def check():
    return 0

def main(a, b) -> int:
    data = [
1, 2,
3,
    ]
    return sum(data)


def bfs(a, b) -> int:
    '''bfs helper.'''
    total = 0
    for x in range(3):
        total += x
    return total


# about the next one
@staticmethod
def answer(
    a,
    b=2,
):
    class Local:
        pass
    return Local()


# about the next one
@staticmethod
def solve():
    return 0


# entry point
solve()
