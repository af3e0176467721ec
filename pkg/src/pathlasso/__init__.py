"""Path-lasso sparse autoencoders with PCA and lasso baselines."""
from .baselines import PcaModel, lasso_ae_train, pca_fit, plain_ae_train
from .data import Dataset, generate_hypercube, load_csv, save_csv, split, standardize
from .evaluation import MetricReport, count_connections, evaluate, knn_match, label_match, observation_match, r_squared
from .penalties import connection_matrix, symmetric_connection_matrix
from .trainer import Autoencoder, AutoencoderSpec, TrainConfig, TrainReport, train_three_stage

__version__ = "0.1.0"
