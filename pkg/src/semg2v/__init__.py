"""Silent EMG to audible speech: conditioning, features, alignment, model, training, vocoding."""

__version__ = "0.1.0"
