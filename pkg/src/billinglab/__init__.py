"""billinglab: a semi-supervised anomaly-detection laboratory for
synthetic billing sequences.

Pipeline: generate synthetic billing data -> clean/encode/scale/window
-> pseudo-label with an isolation forest or autoencoder -> train LSTM
and transformer sequence classifiers -> optionally stack them with a
logistic-regression meta-learner -> evaluate with confusion metrics,
McNemar's test, and agreement reports.
"""

__version__ = "0.1.0"
