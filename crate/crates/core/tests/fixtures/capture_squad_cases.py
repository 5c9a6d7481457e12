"""Capture normalize_answer / compute_f1 outputs from the SQuAD 2.0 evaluation
script (v2.0) for the normalization fixture. The two functions below are copied
from the official script; run with `python3 capture_squad_cases.py > squad_cases.json`.
"""
import collections
import json
import re
import string


def normalize_answer(s):
    def remove_articles(text):
        regex = re.compile(r'\b(a|an|the)\b', re.UNICODE)
        return re.sub(regex, ' ', text)

    def white_space_fix(text):
        return ' '.join(text.split())

    def remove_punc(text):
        exclude = set(string.punctuation)
        return ''.join(ch for ch in text if ch not in exclude)

    def lower(text):
        return text.lower()

    return white_space_fix(remove_articles(remove_punc(lower(s))))


def get_tokens(s):
    if not s:
        return []
    return normalize_answer(s).split()


def compute_f1(a_gold, a_pred):
    gold_toks = get_tokens(a_gold)
    pred_toks = get_tokens(a_pred)
    common = collections.Counter(gold_toks) & collections.Counter(pred_toks)
    num_same = sum(common.values())
    if len(gold_toks) == 0 or len(pred_toks) == 0:
        return int(gold_toks == pred_toks)
    if num_same == 0:
        return 0
    precision = 1.0 * num_same / len(pred_toks)
    recall = 1.0 * num_same / len(gold_toks)
    return (2 * precision * recall) / (precision + recall)


CASES = [
    ("The Cat!", ["cat"]),
    ("", [""]),
    ("an  Absolute   Monarchy.", ["absolute monarchy"]),
    ("0.35", ["0.45 to 0.60"]),
    ("about 0.35 pounds", ["0.35 pounds"]),
    ("the cat sat", ["cat"]),
    ("x", ["y"]),
    ("A", ["a"]),
    ("The the THE", [""]),
    ("theater", ["the ater"]),
    ("an apple a day", ["apple day"]),
    ("Anthem", ["an them"]),
    ("U.S.A.", ["usa"]),
    ("rock-n-roll", ["rock n roll"]),
    ("rock - n - roll", ["rocknroll"]),
    ("$1,000,000", ["1000000", "one million"]),
    ("50%", ["50 percent", "50"]),
    ("2+2=4", ["224"]),
    ("a<b>c", ["abc"]),
    ("x|y~z", ["xyz"]),
    ("^caret^", ["caret"]),
    ("`backtick`", ["backtick"]),
    ("under_score", ["underscore"]),
    ("O'Neill", ["oneill"]),
    ("\"quoted\" words", ["quoted words"]),
    ("(parenthetical)", ["parenthetical"]),
    ("semi;colon:colon", ["semicoloncolon"]),
    ("tab\tseparated\nlines", ["tab separated lines"]),
    ("   leading and trailing   ", ["leading and trailing"]),
    ("Paris", ["Paris, France", "paris"]),
    ("Paris, France", ["Paris"]),
    ("the Eiffel Tower in Paris", ["Eiffel Tower"]),
    ("cat cat dog", ["cat dog dog"]),
    ("dog", ["cat cat dog"]),
    ("New York City", ["new york", "york city"]),
    ("1984", ["nineteen eighty-four", "1984"]),
    ("March 3, 1921", ["3 March 1921"]),
    ("Georg Cantor", ["Cantor"]),
    ("a", ["the"]),
    ("an", [""]),
    ("the a an", ["a"]),
    ("Café Münster", ["café münster"]),
    ("ÉCOLE normale", ["école normale"]),
    ("naïve approach", ["naive approach"]),
    ("Zürich, Switzerland", ["zurich"]),
    ("a.m.", ["am"]),
    ("the end.", ["end"]),
    ("apples and oranges", ["oranges and apples"]),
    ("divine, absolute monarchy", ["absolute monarchy"]),
    ("0.45 to 0.60", ["0.45 to 0.60 are more typically used"]),
]

assert len(CASES) == 50

out = []
for pred, golds in CASES:
    out.append({
        "pred": pred,
        "golds": golds,
        "normalized_pred": normalize_answer(pred),
        "normalized_golds": [normalize_answer(g) for g in golds],
        "exact": max(int(normalize_answer(pred) == normalize_answer(g)) for g in golds),
        "f1": max(compute_f1(g, pred) for g in golds),
    })
print(json.dumps(out, indent=1, ensure_ascii=False))
