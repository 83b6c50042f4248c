"""
Metrics and retrieval analyses
==============================

Entity-level micro and macro F1, mention detection F1, typing accuracy,
coarse-level scores, and the character IoU between each retrieval query
and its result.
"""

from uraner.core import EntitySpan as S, corpus_spans
from uraner.evaluation import char_iou, entity_f1, in_out_report, iou_by_strategy, iou_histogram
from uraner.experiments import synthetic_retrievers
from uraner.synthetic import make_world

gold = [[S(0, 1, "Artist"), S(2, 3, "Athlete"), S(5, 7, "Food")]]
pred = [[S(0, 1, "Scientist"), S(2, 3, "Athlete")]]
report = entity_f1(gold, pred, "macro", coarse=True)
print(report.table())

# repeated characters count separately
print("IoU('aab', 'ab') =", round(char_iou("aab", "ab"), 4))

# analyses over a small synthetic world with gold spans used as the "prediction"
world = make_world(0, n_train=10, n_test=40)
full, text_only = synthetic_retrievers(world)
bundles = [full.bundle(s) for s, _ in world.test]
gold = corpus_spans(world.test)

for strategy, values in sorted(iou_by_strategy(bundles).items()):
    print(f"{strategy:<10} histogram {iou_histogram(values, 5)}")

text_bundles = [text_only.bundle(s) for s, _ in world.test]
io = in_out_report(gold, [[] for _ in gold], text_bundles)
print(f"TEXT2TEXT alone covers every gold span in {io.in_ratio:.0%} of sentences")
