"""Desk-scale laboratory for self-recalibrating neural-to-text decoding.

Subpackages by responsibility:

- :mod:`corplab.text` -- alphabet, CER/WER metrics, transcript corruption
- :mod:`corplab.synth` -- nonstationary synthetic neural feature generator
- :mod:`corplab.net` -- day-adapted GRU decoder with analytic gradients
- :mod:`corplab.ctc` -- CTC loss, gradients, and greedy decoding
- :mod:`corplab.lm` -- trigram language model and prefix beam search
- :mod:`corplab.recal` -- pseudo-label recalibration engine (CORP)
- :mod:`corplab.baselines` -- frozen / ground-truth / FA-stabilizer methods
- :mod:`corplab.harness` -- experiment orchestration and result emission
"""

__version__ = "0.1.0"
