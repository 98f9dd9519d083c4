"""Writes a synthetic Malay -> Indonesian demo corpus and its word lexicon.

Every source word has a one-word translation, so the lexicon mock backend
translates the corpus exactly.
"""
import random

LEXICON = {
    "boleh": "bisa", "baharu": "baru", "kerana": "karena", "bahawa": "bahwa",
    "kos": "biaya", "standard": "standar", "penyelidik": "peneliti",
    "pengesanan": "deteksi", "kanser": "kanker", "pesakit": "pasien",
    "tempatan": "lokal", "kenderaan": "kendaraan", "tergolek": "terguling",
    "ketika": "saat", "Isnin": "Senin", "saintis": "ilmuwan",
    "universiti": "universitas", "melaporkan": "melaporkan", "mengatakan": "mengatakan",
    "dan": "dan", "di": "di", "yang": "yang", "itu": "itu", "ini": "ini",
    "pada": "pada", "hari": "hari", "dengan": "dengan", "untuk": "untuk",
    "mereka": "mereka", "kami": "kami", "dari": "dari", "sebuah": "sebuah",
    "kepada": "kepada", "negara": "negara", "alat": "alat", "sel": "sel",
    "awal": "awal", "rendah": "rendah", "media": "media", "polis": "polisi",
    "mengesyaki": "mencurigai", "suspek": "tersangka", "kadar": "tingkat",
    "kematian": "kematian", "tinggi": "tinggi", "sekolah": "sekolah",
}


def translate(word):
    if word in LEXICON:
        return LEXICON[word]
    return LEXICON[word.lower()].capitalize()


rng = random.Random(7)
words = sorted(LEXICON)
src, ref = [], []
for i in range(30):
    n = 4 + (i * 7) % 37
    sent = [rng.choice(words) for _ in range(n)]
    sent[0] = sent[0][0].upper() + sent[0][1:]
    src.append(" ".join(sent) + " .")
    ref.append(" ".join(translate(w) for w in sent) + " .")

with open("zsm.txt", "w", encoding="utf-8") as f:
    f.write("\n".join(src) + "\n")
with open("ind.txt", "w", encoding="utf-8") as f:
    f.write("\n".join(ref) + "\n")
with open("zsm-ind.lex.tsv", "w", encoding="utf-8") as f:
    f.write("# Malay\tIndonesian\n")
    for s, t in sorted(LEXICON.items()):
        f.write(f"{s}\t{t}\n")
        if s.islower():
            f.write(f"{s.capitalize()}\t{t.capitalize()}\n")
