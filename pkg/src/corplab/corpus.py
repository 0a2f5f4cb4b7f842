"""Sentence source: a small generative English grammar and the bundled corpus.

Sentences are short past-tense narrative clauses and simple questions over
a closed vocabulary, using the five punctuation marks of the decoding
alphabet. The bundled ``data/corpus.txt`` (used to train the default
trigram model) was produced by :func:`generate_sentences` with a fixed
seed; experiment sentence pools draw fresh sentences from the same
grammar so that dataset transcripts and LM training text share statistics
without being the same lines.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .errors import CorpusExhausted

DETERMINERS = ["the", "a", "his", "her", "their", "our", "my", "your", "this", "that"]

PEOPLE = [
    "man", "woman", "boy", "girl", "child", "farmer", "teacher", "doctor",
    "sailor", "soldier", "driver", "painter", "singer", "baker", "hunter",
    "neighbor", "stranger", "friend", "brother", "sister", "mother", "father",
    "uncle", "aunt", "captain", "king", "queen", "guard", "clerk", "judge",
    "nurse", "miller", "tailor", "shepherd", "fisherman", "merchant",
    "servant", "student", "writer", "poet", "rider", "keeper", "porter",
    "cook", "guest", "dancer", "weaver", "carpenter", "gardener", "trader",
]

ANIMALS = [
    "dog", "cat", "horse", "bird", "fox", "wolf", "bear", "deer", "rabbit",
    "mouse", "sheep", "goat", "cow", "pig", "hen", "duck", "goose", "owl",
    "hawk", "crow", "fish", "snake", "frog", "bee", "ant", "spider",
    "squirrel", "lamb", "pony", "hound", "calf", "kitten", "swan", "heron",
]

THINGS = [
    "house", "door", "window", "table", "chair", "bed", "lamp", "book",
    "letter", "paper", "pen", "knife", "spoon", "cup", "plate", "basket",
    "rope", "stone", "stick", "wheel", "cart", "wagon", "boat", "ship",
    "bridge", "road", "path", "gate", "fence", "wall", "roof", "floor",
    "candle", "clock", "bell", "coat", "hat", "shoe", "glove", "ring",
    "coin", "purse", "bag", "box", "chest", "key", "lock", "mirror",
    "picture", "map", "flag", "drum", "horn", "sword", "net", "hook",
    "hammer", "nail", "saw", "seed", "grain", "bread", "cake", "apple",
    "pear", "plum", "berry", "corn", "wheat", "hay", "egg", "loaf",
    "blanket", "pillow", "bucket", "ladder", "shovel", "broom", "kettle",
    "jar", "bottle", "barrel", "sack", "cloak", "scarf", "button", "thread",
    "needle", "ribbon", "feather", "shell", "pebble", "branch", "leaf",
    "flower", "root", "acorn", "log", "plank", "beam", "brick", "tile",
]

PLACES = [
    "garden", "orchard", "farm", "barn", "mill", "well", "church", "school",
    "shop", "market", "village", "town", "city", "street", "corner",
    "square", "yard", "porch", "kitchen", "cellar", "attic", "room", "hall",
    "station", "harbor", "field", "meadow", "forest", "wood", "valley",
    "hill", "mountain", "river", "lake", "pond", "stream", "shore", "beach",
    "island", "cave", "camp", "inn", "stable", "tower", "castle", "cottage",
    "library", "bakery", "workshop", "courtyard",
]

NATURE = [
    "fire", "smoke", "dust", "mud", "sand", "clay", "ice", "snow", "rain",
    "wind", "storm", "cloud", "sun", "moon", "star", "sky", "fog", "frost",
    "thunder", "lightning", "shadow", "light", "dawn", "dusk", "tide",
]

ABSTRACT = [
    "voice", "sound", "song", "story", "word", "name", "question", "answer",
    "game", "prize", "race", "journey", "trip", "visit", "plan", "secret",
    "dream", "promise", "warning", "signal", "message", "lesson", "reason",
    "chance", "habit", "task", "errand", "bargain", "wager", "riddle",
]

TIMES_NOUN = [
    "morning", "evening", "night", "noon", "winter", "spring", "summer",
    "autumn", "harvest", "festival",
]

ADJECTIVES = [
    "old", "young", "small", "little", "big", "large", "tall", "short",
    "long", "wide", "narrow", "deep", "high", "low", "dark", "bright",
    "heavy", "warm", "cold", "cool", "dry", "wet", "clean", "dirty", "new",
    "fresh", "quiet", "loud", "soft", "hard", "smooth", "rough", "sharp",
    "dull", "strong", "weak", "quick", "slow", "brave", "shy", "proud",
    "kind", "gentle", "wise", "foolish", "happy", "sad", "angry", "calm",
    "tired", "eager", "busy", "lazy", "rich", "poor", "empty", "full",
    "open", "broken", "strange", "distant", "early", "late", "silent",
    "hungry", "thirsty", "sleepy", "careful", "golden", "silver", "white",
    "black", "red", "blue", "green", "brown", "gray", "yellow", "pale",
    "lovely", "pretty", "plain", "simple", "honest", "clever", "curious",
    "patient", "steady", "crooked", "dusty", "frozen", "hollow", "mossy",
    "rusty", "shiny", "sturdy", "weary", "cheerful", "gloomy", "narrow",
]

VERBS_INTR = [
    "walked", "ran", "slept", "waited", "smiled", "laughed", "cried",
    "sang", "danced", "jumped", "fell", "rose", "stood", "sat", "rested",
    "worked", "played", "swam", "wandered", "hurried", "stumbled",
    "arrived", "departed", "returned", "vanished", "appeared", "paused",
    "listened", "dreamed", "whispered", "shouted", "nodded", "sighed",
    "trembled", "shivered", "yawned", "stretched", "knelt", "marched",
    "drifted", "floated", "climbed", "crawled", "galloped", "trotted",
]

VERBS_TRANS = [
    "saw", "found", "lost", "took", "brought", "carried", "held",
    "dropped", "lifted", "pushed", "pulled", "opened", "closed", "broke",
    "mended", "built", "painted", "cleaned", "washed", "filled", "emptied",
    "moved", "placed", "kept", "gave", "sold", "bought", "borrowed",
    "counted", "gathered", "picked", "planted", "watered", "tied",
    "wrapped", "covered", "hid", "showed", "watched", "followed", "chased",
    "caught", "freed", "fed", "called", "named", "asked", "answered",
    "told", "taught", "read", "wrote", "drew", "folded", "burned",
    "cooked", "baked", "tasted", "smelled", "touched", "heard",
    "remembered", "forgot", "wanted", "needed", "liked", "loved", "feared",
    "trusted", "repaired", "polished", "sharpened", "stacked", "sorted",
    "traded", "measured", "weighed", "guarded", "rescued",
]

VERBS_BASE = [
    "see", "find", "take", "bring", "carry", "hold", "open", "close",
    "build", "paint", "clean", "wash", "fill", "move", "keep", "give",
    "sell", "buy", "count", "gather", "pick", "plant", "tie", "wrap",
    "cover", "hide", "show", "watch", "follow", "chase", "catch", "feed",
    "call", "ask", "tell", "teach", "read", "write", "draw", "fold",
    "burn", "cook", "bake", "taste", "touch", "hear", "remember", "forget",
    "want", "need", "like", "love", "fear", "trust", "mend", "repair",
    "polish", "borrow", "guard", "rescue",
]

ADVERBS = [
    "slowly", "quickly", "quietly", "loudly", "carefully", "gladly",
    "sadly", "bravely", "calmly", "gently", "firmly", "suddenly",
    "finally", "early", "late", "often", "rarely", "always", "never",
    "soon", "again", "together", "alone", "nearby", "everywhere", "twice",
    "once", "yesterday", "today", "somewhere",
]

PREPOSITIONS = [
    "in", "on", "under", "over", "near", "beside", "behind", "beyond",
    "across", "along", "around", "through", "toward", "past", "between",
    "against", "inside", "outside",
]

TIME_PHRASES = [
    "in the morning", "in the evening", "at night", "at noon",
    "after the storm", "before the rain", "all day", "all night",
    "last week", "last night", "every morning", "after supper",
    "before dawn", "at sunrise", "at sunset", "in the spring",
    "in the winter", "on market day", "after the harvest", "by midday",
]

CONTRACTIONS_NEG = ["didn't", "wasn't", "couldn't", "wouldn't", "hadn't"]

_PLURAL_STEMS = PEOPLE + ANIMALS + THINGS

_NOUNS_ALL = PEOPLE + ANIMALS + THINGS + PLACES + NATURE + ABSTRACT + TIMES_NOUN


def _plural(noun: str) -> str:
    if noun.endswith(("s", "sh", "ch", "x")):
        return noun + "es"
    if noun.endswith("y") and noun[-2] not in "aeiou":
        return noun[:-1] + "ies"
    return noun + "s"


PLURALS = sorted({_plural(n) for n in _PLURAL_STEMS})


def vocabulary() -> list[str]:
    """Every word form the grammar can emit."""
    words = set(
        DETERMINERS + _NOUNS_ALL + PLURALS + ADJECTIVES + VERBS_INTR
        + VERBS_TRANS + VERBS_BASE + ADVERBS + PREPOSITIONS
        + CONTRACTIONS_NEG
        + [p + "'s" for p in PEOPLE]
        + ["did", "was", "were", "where", "who", "why", "what", "and",
           "but", "while", "when", "it", "its", "not", "very",
           "so", "then", "there", "here", "at", "by", "of", "with", "to",
           "for", "from", "all", "last", "every", "day", "week", "supper",
           "dawn", "sunrise", "sunset", "midday"]
    )
    for phrase in TIME_PHRASES:
        words.update(phrase.split(" "))
    return sorted(words)


def _possessive(rng: np.random.Generator) -> str:
    owner = _pick(rng, PEOPLE)
    return f"the {owner}'s"


def _pick(rng: np.random.Generator, items: list[str]) -> str:
    return items[rng.integers(len(items))]


def _noun_phrase(rng: np.random.Generator, pool: list[str], adj_p: float = 0.45) -> str:
    roll = rng.random()
    plural_pool = [n for n in pool if n in set(_PLURAL_STEMS)]
    if roll < 0.08:
        det = _possessive(rng)
        noun = _pick(rng, pool)
    elif roll < 0.22 and plural_pool:
        det = "the"
        noun = _plural(_pick(rng, plural_pool))
    else:
        det = _pick(rng, DETERMINERS)
        noun = _pick(rng, pool)
    if rng.random() < adj_p:
        return f"{det} {_pick(rng, ADJECTIVES)} {noun}"
    return f"{det} {noun}"


def _subject(rng: np.random.Generator) -> str:
    pool = [PEOPLE, ANIMALS][rng.integers(2)]
    return _noun_phrase(rng, pool)


def _object(rng: np.random.Generator) -> str:
    pool = [THINGS, ANIMALS, ABSTRACT][rng.integers(3)]
    return _noun_phrase(rng, pool)


def _place(rng: np.random.Generator) -> str:
    return f"{_pick(rng, PREPOSITIONS)} {_noun_phrase(rng, PLACES + NATURE, adj_p=0.25)}"


def generate_sentence(rng: np.random.Generator) -> str:
    """One sentence; terminal punctuation attaches to the last word."""
    t = rng.random()
    if t < 0.28:
        s = f"{_subject(rng)} {_pick(rng, VERBS_TRANS)} {_object(rng)}."
    elif t < 0.44:
        s = f"{_subject(rng)} {_pick(rng, VERBS_INTR)} {_place(rng)}."
    elif t < 0.52:
        s = f"{_subject(rng)} {_pick(rng, VERBS_INTR)}."
    elif t < 0.60:
        s = f"{_subject(rng)} {_pick(rng, VERBS_INTR)} {_pick(rng, ADVERBS)}."
    elif t < 0.72:
        s = f"{_pick(rng, TIME_PHRASES)}, {_subject(rng)} {_pick(rng, VERBS_TRANS)} {_object(rng)}."
    elif t < 0.79:
        s = f"{_subject(rng)} {_pick(rng, CONTRACTIONS_NEG)} {_pick(rng, VERBS_BASE)} {_object(rng)}."
    elif t < 0.86:
        s = f"did {_subject(rng)} {_pick(rng, VERBS_BASE)} {_object(rng)}?"
    elif t < 0.93:
        s = f"where was {_object(rng)}?"
    else:
        s = f"{_subject(rng)} {_pick(rng, VERBS_TRANS)} {_object(rng)} {_place(rng)}."
    return s


def generate_sentences(
    n: int,
    rng: np.random.Generator,
    min_words: int | None = None,
    max_words: int | None = None,
    max_attempts_factor: int = 200,
) -> list[str]:
    """``n`` distinct sentences, optionally filtered to a word-count range."""
    seen: set[str] = set()
    out: list[str] = []
    attempts = 0
    limit = max_attempts_factor * max(n, 1)
    while len(out) < n:
        attempts += 1
        if attempts > limit:
            raise CorpusExhausted(
                f"could not generate {n} distinct sentences (got {len(out)})"
            )
        s = generate_sentence(rng)
        nwords = len(s.split(" "))
        if min_words is not None and nwords < min_words:
            continue
        if max_words is not None and nwords > max_words:
            continue
        if s in seen:
            continue
        seen.add(s)
        out.append(s)
    return out


def default_corpus_text() -> str:
    """The bundled LM training corpus."""
    return resources.files("corplab").joinpath("data/corpus.txt").read_text("utf-8")


def build_default_corpus(n_sentences: int = 9000, seed: int = 17) -> str:
    """Regenerate the text that ships as ``data/corpus.txt``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    return "\n".join(generate_sentences(n_sentences, rng)) + "\n"
