"""
Item-similarity recommendations and their evaluation
====================================================

Three users rate a handful of items placed on a circle; each unrated item
is scored by the similarity-weighted mean of the user's ratings.
"""

import numpy as np

from kgrecbias.evalkit import precision_recall_f1
from kgrecbias.recommender import ItemVectorIndex, UserProfile, recommend_top_n, score

angles = np.linspace(0, np.pi, 8)
items = list(range(10, 18))
idx = ItemVectorIndex(items, np.c_[np.cos(angles), np.sin(angles)])

users = [
    UserProfile(1, [10, 11], [5, 4]),
    UserProfile(2, [16, 17], [5, 5]),
    UserProfile(3, [10, 17], [5, 1]),
]

# direct scoring of one candidate
print("user 3, item 12:", round(score(users[2], 12, idx), 4))

recs = {u.user_id: recommend_top_n(u, 3, idx) for u in users}
for uid, rec in recs.items():
    print(uid, [(i, round(s, 3)) for i, s in zip(rec.items, rec.scores)])

# suppose these are the items each user later rated highly
held_out = {1: {12, 13}, 2: {15}, 3: {11, 16}}
report = precision_recall_f1(recs, held_out, n=3)
print(f"precision {report.precision:.3f}  recall {report.recall:.3f}  f1 {report.f1:.3f} over {report.users} users")
