"""
Four ways to use retrieved context
==================================

All four architectures share one small transformer encoder and a CRF:

* ``baseline``: the sentence alone,
* ``raner``: the sentence concatenated with the first context slice,
* ``pre``: as ``raner``, plus one mean-pooled vector per anchor name
  appended to the input,
* ``post``: one pass per slice, then an elementwise max over the sentence
  token states.
"""

import dataclasses

import numpy as np

from uraner.core import Sentence
from uraner.ner_model import ModelConfig, ModelParams, Vocab, anchor_vectors, forward
from uraner.retrieval import assemble_bundle

sentence = Sentence(tuple("In 1995 Deal Hudson took over Crisis .".split()))
passage = ("Deal Wyatt Hudson is an American writer . In 1995 Hudson became publisher of the "
           "Crisis magazine and held the post until 2011 .")
bundle = assemble_bundle(sentence, [passage], [("Deal Hudson", ["human"]), ("Crisis", ["magazine"])],
                         slice_limit=10)
print(f"{bundle.m} extra contexts, {len(bundle.anchors)} anchors")

vocab = Vocab.build([sentence.tokens] + bundle.contexts)
params = ModelParams.init(ModelConfig(d=16, layers=1, heads=2, max_len=64), vocab, seed=0)

for mode in ("baseline", "raner", "pre", "post"):
    emissions = forward(params, mode, bundle).data
    print(f"{mode:<9} emissions {emissions.shape}, first row mean {emissions[0].mean():+.5f}")

# the anchor matrix V has one row per distinct anchor name
V, surfaces, _ = anchor_vectors(params, bundle)
print("anchor rows:", surfaces, V.shape)

# the post-infusion max does not care about the order of the extra contexts
flipped = dataclasses.replace(bundle, extra_contexts=bundle.extra_contexts[::-1])
same = np.array_equal(forward(params, "post", bundle).data, forward(params, "post", flipped).data)
print("post-infusion invariant to context order:", same)

# with no extra contexts, post-infusion is exactly the concatenation model
short = assemble_bundle(sentence, ["Hudson wrote essays ."], [], slice_limit=10)
print("m = 0 gives raner output:",
      np.array_equal(forward(params, "post", short).data, forward(params, "raner", short).data))
