"""
Seeded synthetic dialogues whose summaries hinge on a pronoun.

Each dialogue has a teller, one or two listeners, and two absent people of
the same gender (the actor and the distractor). The teller mentions both,
says one thing about each in random order, then uses a pronoun for the one
who will act. The reference summary names the actor, so a model can only
get it right by following the pronoun back to its antecedent. The gold
annotation links the actor's name to the pronoun, the distractor's two
mentions to each other, and (sometimes) the teller's speaker tokens to a
vocative.
"""

import logging
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .annotation import CorefAnnotation
from .corpus import Corpus, Example
from .dialogue import Dialogue, Span, Turn, flatten_dialogue
from .exceptions import ConfigurationError


logger = logging.getLogger(__name__)

SPEAKERS = (
    "Paul", "Amanda", "Derek", "Hannah", "Chris", "Julia", "Mark", "Olivia",
    "Ryan", "Nora", "Victor", "Lily",
)
PEOPLE = {
    "he": ("Tom", "Jake", "Sam", "Mike", "Oliver", "Harry", "Leo", "Ben"),
    "she": ("Anna", "Emma", "Lucy", "Kate", "Mia", "Sophie", "Grace", "Ella"),
}
OBJECT_PRONOUN = {"he": "him", "she": "her"}
PLACES = ("gym", "office", "party", "station", "market", "library", "cafe")
FACTS = (
    "was late again", "looked really tired", "was in a great mood",
    "talked about the weather", "wore a funny hat", "had a new phone",
    "was worried about the exam", "was busy all day",
)
ACTIONS = (
    "fix the car", "book the tickets", "bring the cake", "call the landlord",
    "pick up the kids", "order the pizza", "clean the kitchen", "send the photos",
    "buy the gift", "water the plants",
)
FILLERS = (
    "ok", "haha", "i see", "really ?", "that is funny", "lol", "sure",
    "nice", "no way", "good to know", "hmm", "cool",
)
THIRD_SPEAKER_PROBABILITY = 0.4
VOCATIVE_PROBABILITY = 0.5
MIN_TURNS = 8
MAX_TURNS = 14


@dataclass
class _Draft:
    """Turns under construction with the tokens that belong to each chain."""

    turns: List[Tuple[str, List[Tuple[str, Optional[str]]]]]

    def say(self, speaker: str, text: str, tags: Optional[Dict[int, str]] = None) -> None:
        words = text.split()
        tags = tags or {}
        self.turns.append((speaker, [(w, tags.get(i)) for i, w in enumerate(words)]))

    def dialogue(self, dialogue_id: str) -> Dialogue:
        return Dialogue(
            dialogue_id,
            tuple(Turn(speaker, " ".join(w for w, _ in words)) for speaker, words in self.turns),
        )

    def chains(self, speaker_chain: Optional[str]) -> Dict[str, List[Span]]:
        chains: Dict[str, List[Span]] = {}
        position = 0
        for speaker, words in self.turns:
            if speaker_chain is not None and speaker == speaker_chain:
                chains.setdefault(speaker, []).append(Span(position, position))
            position += 2
            for word, tag in words:
                if tag is not None:
                    chains.setdefault(tag, []).append(Span(position, position))
                position += 1
        return chains


def _example(index: int, rng: random.Random) -> Example:
    speakers = rng.sample(SPEAKERS, 3)
    teller, listener = speakers[0], speakers[1]
    third = speakers[2] if rng.random() < THIRD_SPEAKER_PROBABILITY else None
    listeners = [listener] + ([third] if third else [])

    pronoun = rng.choice(sorted(PEOPLE))
    actor, distractor = rng.sample(PEOPLE[pronoun], 2)
    first, second = (actor, distractor) if rng.random() < 0.5 else (distractor, actor)
    place = rng.choice(PLACES)
    actor_fact, distractor_fact = rng.sample(FACTS, 2)
    action = rng.choice(ACTIONS)

    core = _Draft([])
    core.say(teller, f"i met {first} and {second} at the {place} today .",
             {2: "actor" if first == actor else "distractor",
              4: "actor" if second == actor else "distractor"})
    core.say(listener, "oh nice , how are they ?")
    facts = [(actor, actor_fact, "actor"), (distractor, distractor_fact, "distractor")]
    rng.shuffle(facts)
    for name, fact, tag in facts:
        core.say(teller, f"{name} {fact} .", {0: tag})
    if rng.random() < 0.5:
        core.say(teller, f"{pronoun} promised to {action} tomorrow .", {0: "actor"})
    else:
        core.say(teller, f"i asked {OBJECT_PRONOUN[pronoun]} to {action} tomorrow .", {2: "actor"})
    vocative = rng.random() < VOCATIVE_PROBABILITY
    closing = f"great , thanks {teller} ." if vocative else "great , thanks ."

    target = rng.randint(MIN_TURNS, MAX_TURNS)
    fillers = target - len(core.turns) - 1
    draft = _Draft([])
    # fillers go after the opening exchange so the core order is preserved
    slots = sorted(rng.randint(2, len(core.turns)) for _ in range(fillers))
    for k, turn in enumerate(core.turns):
        while slots and slots[0] == k:
            slots.pop(0)
            draft.say(rng.choice(listeners), rng.choice(FILLERS))
        draft.turns.append(turn)
    for _ in slots:
        draft.say(rng.choice(listeners), rng.choice(FILLERS))
    draft.say(listener, closing, {2: teller} if vocative else None)

    dialogue_id = f"synthetic-{index:05d}"
    dialogue = draft.dialogue(dialogue_id)
    chains = draft.chains(teller if vocative else None)
    annotation = CorefAnnotation(
        dialogue_id, tuple(tuple(spans) for spans in chains.values() if len(spans) >= 2)
    ).normalized()
    annotation.validate(len(flatten_dialogue(dialogue)))

    return Example(
        dialogue=dialogue,
        annotation=annotation,
        summary=f"{teller} says {actor} will {action} .",
        actor=actor,
        distractor=distractor,
    )


def generate_synthetic(
    n: int, seed: int, split: Optional[Sequence[int]] = None
) -> Corpus:
    """Generate ``n`` examples deterministically from ``seed``.

    Args:
        n: Number of dialogues, at least 1
        seed: Random seed
        split: (train, validation, test) sizes summing to ``n``; all train when omitted

    Raises:
        ConfigurationError: If ``n`` < 1 or the split does not add up
    """
    if n < 1:
        raise ConfigurationError(f"Need at least one dialogue, got n={n}")
    sizes = tuple(split) if split is not None else (n, 0, 0)
    if len(sizes) != 3 or any(s < 0 for s in sizes) or sum(sizes) != n:
        raise ConfigurationError(f"Split {list(sizes)} does not divide {n} dialogues")

    rng = random.Random(seed)
    examples = [_example(index, rng) for index in range(n)]
    train_size, validation_size, _ = sizes
    corpus = Corpus(
        train=examples[:train_size],
        validation=examples[train_size : train_size + validation_size],
        test=examples[train_size + validation_size :],
    )
    logger.info(f"Generated {n} synthetic dialogues (seed {seed}, split {corpus.sizes})")
    return corpus
