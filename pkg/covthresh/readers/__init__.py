from .csv import read_obs_csv, read_sym_csv
