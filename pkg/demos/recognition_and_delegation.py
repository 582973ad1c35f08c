"""Train primitive models, score four assembly tasks and split them between robot and operator.

Uses the bundled synthetic catalog, so no motion-capture hardware is needed.
A small training set keeps the run under a minute; raise ``CLIPS`` and
``STATES`` for the full benchmark configuration (20 clips, 7 states).
"""

from ergohrc.ergonomics import assess_tasks, build_delegation, format_delegation_text
from ergohrc.mocap import load_catalog
from ergohrc.recognition import evaluate_classifier, train_models
from ergohrc.simulation import (DEFAULT_TASKS, SyntheticOperatorProfile, synthesize_dataset,
                                synthesize_task_recording)

CLIPS = 6
STATES = 4

catalog = load_catalog()
scores = [e.eaws_score for e in catalog]
print(f"catalog: {len(catalog)} primitives, EAWS scores {min(scores)}..{max(scores)}")

train = synthesize_dataset(catalog, CLIPS, root_seed=1)
models = train_models(train, n_states=STATES, max_iters=30)

held_out = synthesize_dataset(catalog, 3, root_seed=1, offset=CLIPS)
report = evaluate_classifier([c for clips in held_out.values() for c in clips], models, catalog)
print(f"held-out macro F-score: {100 * report.macro_f_score:.1f}%")

# one recording per task from each of three synthetic operators
operators = [SyntheticOperatorProfile(str(i), seed=100 + i) for i in range(3)]
recordings = {
    task: [synthesize_task_recording(spec, op, catalog, seed=j, task_id=task)
           for j, op in enumerate(operators)]
    for task, spec in DEFAULT_TASKS.items()
}
summaries, _ = assess_tasks(recordings, models, catalog)
print("\ntask  mean   std   mode  class")
for s in summaries:
    print(f"{s.task_id:<5} {s.mean:5.2f} {s.std:5.2f} {s.mode:5.1f}  {s.risk_class.label}")

print()
print(format_delegation_text(build_delegation(summaries)), end="")
