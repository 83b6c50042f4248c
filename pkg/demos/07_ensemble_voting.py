"""
Majority voting over several models
===================================

A span survives when strictly more than half of the models predict it.
Overlapping survivors are resolved greedily: more votes first, then the
longer span.
"""

from uraner.core import EntitySpan
from uraner.ensemble import vote, vote_table

hudson = EntitySpan(2, 4, "OtherPER")
hudson_long = EntitySpan(1, 4, "Politician")
crisis = EntitySpan(5, 6, "WrittenWork")

# the vote table counts each distinct span once per model, so overlapping
# spans can both clear the majority bar and must then compete
models = [
    [hudson, crisis],
    [hudson, hudson_long, crisis],
    [hudson, hudson_long, crisis],
    [hudson_long],
    [hudson],
]
for span, votes in sorted(vote_table(models).items()):
    print(f"  {span}  {votes}/5 votes")
print("voted:", vote(models))

# with equal votes the longer span wins
tied = [[hudson, hudson_long], [hudson, hudson_long], [hudson], [hudson_long]]
print("tied votes:", vote(tied))

# exactly half is not a majority
print("2 of 4:", vote([[crisis], [crisis], [], []]))
