# T2G-Former - training, evaluation and graph export from the command line
