"""
Label taxonomy and BIO tagging
==============================

The tagger works over 33 fine-grained labels grouped under 6 coarse
labels. Sentences carry BIO tags; spans are half-open token ranges.
"""

from uraner.core import COARSE_LABELS, FINE_LABELS, TAGS, EntitySpan, Sentence, bio_decode, bio_encode, project_coarse

# the taxonomy: every fine label has exactly one coarse parent
print(len(COARSE_LABELS), "coarse labels:", ", ".join(COARSE_LABELS))
print(len(FINE_LABELS), "fine labels, e.g.", FINE_LABELS[:5])
print("Scientist ->", project_coarse("Scientist"), "| Facility ->", project_coarse("Facility"))

# the tag set is O plus a B-/I- pair per fine label: 2 * 33 + 1
print(len(TAGS), "tags; first few:", TAGS[:5])

# spans to tags and back
sentence = Sentence(("In", "1995", "Deal", "Hudson", "joined", "Crisis", "."))
spans = [EntitySpan(2, 4, "OtherPER"), EntitySpan(5, 6, "WrittenWork")]
tags = bio_encode(spans, len(sentence))
for token, tag in zip(sentence.tokens, tags):
    print(f"  {token:<8}{tag}")
assert bio_decode(tags) == spans

# a tagger can emit an I- tag with no B- before it; decoding treats it as a new span
stray = ["O", "I-Artist", "I-Artist", "O"]
print("stray I- tags decode to", bio_decode(stray))
