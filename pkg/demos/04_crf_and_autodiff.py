"""
Linear-chain CRF and the autodiff engine
========================================

The CRF scores tag paths with emissions plus transitions, including
start and stop states. Its negative log-likelihood is differentiated by a
small reverse-mode autodiff engine over numpy arrays.
"""

import itertools
import math

import numpy as np

from uraner.ner_model import crf_log_partition, crf_marginals, crf_nll, crf_nll_tensor, crf_viterbi
from uraner.ner_model.tensor import Tensor

rng = np.random.default_rng(0)
n, T = 3, 3
emissions = rng.normal(size=(n, T))
transitions = rng.normal(size=(T + 2, T + 2))  # rows/cols T and T+1 are start and stop

# the forward recursion agrees with summing over all 27 paths
log_z = crf_log_partition(emissions, transitions)
probs = [math.exp(-crf_nll(emissions, transitions, list(p))) for p in itertools.product(range(T), repeat=n)]
print(f"log Z = {log_z:.6f}; path probabilities sum to {sum(probs):.12f}")

print("Viterbi path:", crf_viterbi(emissions, transitions))
unary, _, _ = crf_marginals(emissions, transitions)
print("per-position marginals:\n", unary.round(3))

# gradients of the loss flow back to both inputs
e = Tensor(emissions, requires_grad=True)
t = Tensor(transitions, requires_grad=True)
loss = crf_nll_tensor(e, t, [0, 2, 1])
loss.backward()
print("loss", float(loss.data))
print("d loss / d emissions (= marginals minus gold one-hot):\n", e.grad.round(3))

# a central-difference check on one emission entry
eps = 1e-5
bumped = emissions.copy()
bumped[1, 2] += eps
lowered = emissions.copy()
lowered[1, 2] -= eps
numeric = (crf_nll(bumped, transitions, [0, 2, 1]) - crf_nll(lowered, transitions, [0, 2, 1])) / (2 * eps)
print(f"analytic {e.grad[1, 2]:.8f} vs numeric {numeric:.8f}")
