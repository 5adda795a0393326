#!/usr/bin/env python3
"""Builds small WN18RR-style and WN11-style triple sets from a WordNet
database directory (the `dict/` folder holding data.noun, data.verb, ...).

    python3 scripts/wordnet_subsets.py path/to/dict data/

Writes data/wn18rr-mini/{train,valid,test}.txt (unlabeled) and
data/wn11-mini/{train,valid,test}.txt (valid/test carry a 1/-1 label).
Selection is seeded and repeatable.
"""
import collections
import os
import random
import re
import sys

# pointer symbol -> relation name, head is the synset holding the pointer
LINK_RELATIONS = {
    "@": "_hypernym",
    "@i": "_instance_hypernym",
    "%m": "_member_meronym",
    "%p": "_has_part",
    ";c": "_synset_domain_topic_of",
    ";u": "_member_of_domain_usage",
    ";r": "_member_of_domain_region",
    "+": "_derivationally_related_form",
    "^": "_also_see",
    "$": "_verb_group",
    "&": "_similar_to",
}

SENSE_RELATIONS = {
    "@": "_type_of",
    "~i": "_has_instance",
    "@i": "_subordinate_instance_of",
    "%m": "_member_meronym",
    "#m": "_member_holonym",
    "#p": "_part_of",
    "%p": "_has_part",
    ";r": "_domain_region",
    ";c": "_synset_domain_topic",
    "-c": "_domain_topic",
    "&": "_similar_to",
}

POS_FILES = {"n": "data.noun", "v": "data.verb", "a": "data.adj", "r": "data.adv"}


def read_synsets(dict_dir):
    synsets = {}
    for pos, name in POS_FILES.items():
        with open(os.path.join(dict_dir, name), encoding="latin-1") as f:
            for line in f:
                if line.startswith("  "):
                    continue
                fields = line.split("|")[0].split()
                offset, ss_type = fields[0], fields[2]
                w_cnt = int(fields[3], 16)
                words = fields[4 : 4 + 2 * w_cnt : 2]
                i = 4 + 2 * w_cnt
                p_cnt = int(fields[i])
                ptrs = []
                for j in range(p_cnt):
                    sym, tgt, tpos, st = fields[i + 1 + 4 * j : i + 5 + 4 * j]
                    tpos = "a" if tpos == "s" else tpos
                    ptrs.append((sym, tgt + "." + tpos, st))
                key = offset + "." + ("a" if ss_type == "s" else ss_type)
                synsets[key] = (words, ptrs)
    return synsets


def link_triples(synsets):
    out = set()
    for key, (_, ptrs) in synsets.items():
        for sym, tgt, _ in ptrs:
            rel = LINK_RELATIONS.get(sym)
            if rel and tgt in synsets and tgt != key:
                out.add((key, rel, tgt))
    return sorted(out)


def dense_core(triples, min_degree):
    """Entities surviving iterated removal of nodes below `min_degree`."""
    alive = set(triples)
    while True:
        deg = collections.Counter()
        for h, _, t in alive:
            deg[h] += 1
            deg[t] += 1
        keep = {(h, r, t) for h, r, t in alive if deg[h] >= min_degree and deg[t] >= min_degree}
        if keep == alive:
            return sorted(alive)
        alive = keep


def ball(triples, seed_entity, limit):
    """Entities reached breadth-first from `seed_entity` until `limit`."""
    adj = collections.defaultdict(list)
    for h, _, t in triples:
        adj[h].append(t)
        adj[t].append(h)
    seen, queue = {seed_entity}, collections.deque([seed_entity])
    while queue and len(seen) < limit:
        for nb in sorted(adj[queue.popleft()]):
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
                if len(seen) >= limit:
                    break
    return seen


def split_covered(triples, held_sizes, rng):
    """Shuffles and carves held-out sets whose entities and relations all
    occur in what remains for training."""
    pool = list(triples)
    rng.shuffle(pool)
    held = [[] for _ in held_sizes]
    train = list(pool)
    ent_count = collections.Counter()
    rel_count = collections.Counter()
    for h, r, t in train:
        ent_count[h] += 1
        ent_count[t] += 1
        rel_count[r] += 1
    rest = []
    for tr in pool:
        h, r, t = tr
        slot = next((i for i, s in enumerate(held_sizes) if len(held[i]) < s), None)
        if slot is not None and ent_count[h] > 1 and ent_count[t] > 1 and rel_count[r] > 1:
            held[slot].append(tr)
            ent_count[h] -= 1
            ent_count[t] -= 1
            rel_count[r] -= 1
        else:
            rest.append(tr)
    return rest, held


def trim(train, size, rng):
    """Drops random triples until `size` remain, never dropping the last
    occurrence of an entity or relation."""
    pool = list(train)
    rng.shuffle(pool)
    ent = collections.Counter(e for h, _, t in pool for e in (h, t))
    rel = collections.Counter(r for _, r, _ in pool)
    keep = []
    excess = len(pool) - size
    for tr in pool:
        h, r, t = tr
        if excess > 0 and ent[h] > 1 and ent[t] > 1 and rel[r] > 1:
            ent[h] -= 1
            ent[t] -= 1
            rel[r] -= 1
            excess -= 1
        else:
            keep.append(tr)
    return keep


def write(path, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write("\t".join(row) + "\n")


def sense_names(dict_dir):
    """Synset key -> `__lemma_N` for its first lemma, N the sense rank."""
    rank = {}
    for pos, name in (("n", "index.noun"), ("v", "index.verb"), ("a", "index.adj"), ("r", "index.adv")):
        with open(os.path.join(dict_dir, name), encoding="latin-1") as f:
            for line in f:
                if line.startswith("  "):
                    continue
                fields = line.split()
                lemma, synset_cnt, p_cnt = fields[0], int(fields[2]), int(fields[3])
                offsets = fields[6 + p_cnt : 6 + p_cnt + synset_cnt]
                for n, off in enumerate(offsets, 1):
                    rank[(lemma.lower(), off + "." + pos)] = n
    return rank


def sense_triples(synsets, rank):
    def name(key):
        lemma = synsets[key][0][0].lower()
        lemma = re.sub(r"\(.*\)$", "", lemma)
        return "__%s_%d" % (lemma, rank.get((lemma, key), 1))

    out = set()
    for key, (_, ptrs) in synsets.items():
        for sym, tgt, st in ptrs:
            rel = SENSE_RELATIONS.get(sym)
            if rel and st == "0000" and tgt in synsets and tgt != key:
                out.add((name(key), rel, name(tgt)))
    return sorted(out)


INVERSE = {
    "_has_instance": "_subordinate_instance_of",
    "_member_meronym": "_member_holonym",
    "_has_part": "_part_of",
    "_synset_domain_topic": "_domain_topic",
}
INVERSE.update({v: k for k, v in list(INVERSE.items())})
INVERSE["_similar_to"] = "_similar_to"


def induced(triples, entities):
    return [tr for tr in triples if tr[0] in entities and tr[2] in entities]


def wn18rr_mini(synsets, rng, out_dir):
    links = link_triples(synsets)
    core = dense_core(links, 3)
    sub = induced(core, ball(core, "00015568.n", 3700))
    train, (valid, test) = split_covered(sub, [500, 500], rng)
    train = trim(train, 5000, rng)
    seen = {e for h, _, t in train for e in (h, t)}
    rels = {r for _, r, _ in train}
    valid = [x for x in valid if x[0] in seen and x[2] in seen and x[1] in rels]
    test = [x for x in test if x[0] in seen and x[2] in seen and x[1] in rels]
    base = os.path.join(out_dir, "wn18rr-mini")
    write(os.path.join(base, "train.txt"), sorted(train))
    write(os.path.join(base, "valid.txt"), sorted(valid))
    write(os.path.join(base, "test.txt"), sorted(test))
    print("wn18rr-mini:", len(train), len(valid), len(test), len(seen), "entities", len(rels), "relations", file=sys.stderr)


def corrupt(held, tails_of, truth, rng):
    rows = []
    for h, r, t in held:
        rows.append((h, r, t, "1"))
        candidates = tails_of[r]
        for _ in range(1000):
            c = rng.choice(candidates)
            if c != t and (h, r, c) not in truth:
                rows.append((h, r, c, "-1"))
                break
        else:
            raise SystemExit("no corruption for %r" % ((h, r, t),))
    return rows


def wn11_mini(synsets, rank, rng, out_dir):
    senses = sense_triples(synsets, rank)
    truth = set(senses)
    core = dense_core(senses, 2)
    deg = collections.Counter(e for h, _, t in core for e in (h, t))
    seed = max(sorted(deg), key=lambda e: deg[e])
    sub = induced(core, ball(core, seed, 6000))
    train, (valid, test) = split_covered(sub, [1400, 1400], rng)
    held = set(valid) | set(test)
    flipped = {(t, INVERSE[r], h) for h, r, t in held if r in INVERSE}
    train = [x for x in train if x not in flipped]
    train = trim(train, 10000, rng)
    seen = {e for h, _, t in train for e in (h, t)}
    valid = [x for x in valid if x[0] in seen and x[2] in seen][:1000]
    test = [x for x in test if x[0] in seen and x[2] in seen][:1000]
    tails_of = collections.defaultdict(set)
    for h, r, t in sub:
        if t in seen:
            tails_of[r].add(t)
    tails_of = {r: sorted(ts) for r, ts in tails_of.items()}
    base = os.path.join(out_dir, "wn11-mini")
    write(os.path.join(base, "train.txt"), sorted(train))
    write(os.path.join(base, "valid.txt"), corrupt(sorted(valid), tails_of, truth, rng))
    write(os.path.join(base, "test.txt"), corrupt(sorted(test), tails_of, truth, rng))
    rels = {r for _, r, _ in train}
    print("wn11-mini:", len(train), len(valid), len(test), len(seen), "entities", len(rels), "relations", file=sys.stderr)


def main():
    dict_dir, out_dir = sys.argv[1], sys.argv[2]
    synsets = read_synsets(dict_dir)
    wn18rr_mini(synsets, random.Random(20190601), out_dir)
    wn11_mini(synsets, sense_names(dict_dir), random.Random(20190602), out_dir)


if __name__ == "__main__":
    main()
