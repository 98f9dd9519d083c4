"""Builds the metric fixture corpus and freezes reference scores from sacrebleu.

Run once; the outputs (ref.txt, hyp.txt, golden.json) are committed.
Requires: pip install sacrebleu==2.6.0
"""
import json
import random
import subprocess

import sacrebleu
from sacrebleu.metrics import BLEU, CHRF

rng = random.Random(20231015)
base = [l.rstrip("\n") for l in open("refs_base.txt", encoding="utf-8")]
words_pool = [w for l in base for w in l.split()]


def perturb(sent, ops):
    words = sent.split()
    for _ in range(ops):
        op = rng.choice(["drop", "swap", "sub", "suffix", "punct", "dup"])
        if len(words) < 2:
            break
        i = rng.randrange(len(words))
        if op == "drop":
            del words[i]
        elif op == "swap" and i + 1 < len(words):
            words[i], words[i + 1] = words[i + 1], words[i]
        elif op == "sub":
            words[i] = rng.choice(words_pool)
        elif op == "suffix":
            w = words[i]
            words[i] = w[:-2] + w[-1:] if len(w) > 3 else w + w[-1]
        elif op == "punct":
            words[i] = words[i].rstrip(".,;:!?")
        elif op == "dup":
            words.insert(i, words[i])
    return " ".join(words)


refs, hyps = [], []
for idx, r in enumerate(base):
    refs.append(r)
    hyps.append(r if idx % 6 == 0 else perturb(r, 1 + idx % 4))
    refs.append(r)
    hyps.append(perturb(r, 3 + idx % 5))

# edge cases appended at fixed positions
refs[47] = "Ya."
hyps[47] = "Ya ."
hyps[48] = ""
refs[49] = "kucing hitam"
hyps[49] = "anjing putih"
assert len(refs) == len(hyps) == 50

with open("ref.txt", "w", encoding="utf-8") as f:
    f.write("\n".join(refs) + "\n")
with open("hyp.txt", "w", encoding="utf-8") as f:
    f.write("\n".join(hyps) + "\n")

chrf = CHRF(word_order=2)
bleu = BLEU(tokenize="none")
sent_bleu = BLEU(tokenize="none", effective_order=True)

chrfpp_corpus = chrf.corpus_score(hyps, [refs]).score
bleu_corpus = bleu.corpus_score(hyps, [refs]).score
golden = {
    "sacrebleu_version": sacrebleu.__version__,
    "chrf_signature": str(chrf.get_signature()),
    "bleu_signature": str(bleu.get_signature()),
    "chrfpp_corpus": chrfpp_corpus,
    "chrfpp_sentences": [chrf.sentence_score(h, [r]).score for h, r in zip(hyps, refs)],
    "bleu_corpus": bleu_corpus,
    "bleu_sentences": [sent_bleu.sentence_score(h, [r]).score for h, r in zip(hyps, refs)],
    "bleu20_corpus": bleu.corpus_score(hyps[:20], [refs[:20]]).score,
}

# spBLEU plumbing: an external tokenizer command applied to both sides
TOK_CMD = "sed 's/a/a /g'"


def ext_tok(lines):
    out = subprocess.run(["sh", "-c", TOK_CMD], input="\n".join(lines) + "\n",
                         capture_output=True, text=True, check=True).stdout
    return out.split("\n")[: len(lines)]


golden["spbleu_tokenizer_cmd"] = TOK_CMD
golden["spbleu_corpus"] = bleu.corpus_score(ext_tok(hyps), [ext_tok(refs)]).score

with open("golden.json", "w", encoding="utf-8") as f:
    json.dump(golden, f, indent=2, ensure_ascii=False)
    f.write("\n")
print(json.dumps({k: v for k, v in golden.items() if not k.endswith("sentences")}, indent=1))
