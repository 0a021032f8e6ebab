"""Differential fuzzer for dynamic tensor-program compilers.

Generates valid seed tensor programs, applies composable output-preserving
mutations that exercise dynamic language features (loops/comprehensions,
in-place element mutation, nested functions with hoisted definitions,
data-dependent branches), and differentially tests an interpreter-executed
run against a compiler-executed run of the same program.
"""

__version__ = "0.1.0"
