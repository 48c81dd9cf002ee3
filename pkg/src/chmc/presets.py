"""Per-dataset hidden sizes and learning rates, plus dataset shapes for sanity checks."""

# name -> (hidden dimension, learning rate); two hidden layers of that size
HYPERPARAMS = {
    "cellcycle_FUN": (500, 1e-4),
    "derisi_FUN": (500, 1e-4),
    "eisen_FUN": (500, 1e-4),
    "expr_FUN": (1000, 1e-4),
    "gasch1_FUN": (1000, 1e-4),
    "gasch2_FUN": (500, 1e-4),
    "seq_FUN": (2000, 1e-4),
    "spo_FUN": (250, 1e-4),
    "cellcycle_GO": (1000, 1e-4),
    "derisi_GO": (500, 1e-4),
    "eisen_GO": (500, 1e-4),
    "expr_GO": (4000, 1e-5),
    "gasch1_GO": (500, 1e-4),
    "gasch2_GO": (500, 1e-4),
    "seq_GO": (9000, 1e-5),
    "spo_GO": (500, 1e-4),
    "diatoms_others": (2000, 1e-5),
    "enron_others": (1000, 1e-5),
    "ImCLEF07A_others": (1000, 1e-5),
    "ImCLEF07D_others": (1000, 1e-5),
}

# shared settings for the real datasets
COMMON = {
    "weight_decay": 1e-5,
    "patience": 20,
    "beta1": 0.9,
    "beta2": 0.999,
    "dropout_rate": 0.7,
    "batch_size": 4,
    "hidden_layers": 2,
    "hidden_nonlinearity": "relu",
    "max_epochs": 200,
}

# the grid the shared settings were chosen from
SEARCH_GRID = {
    "learning_rate": [1e-3, 1e-4, 1e-5],
    "batch_size": [4, 64, 256],
    "dropout_rate": [0.6, 0.7],
    "weight_decay": [1e-3, 1e-5],
    "hidden_dim": list(range(250, 2001, 250)) + list(range(3000, 10001, 1000)),
}

# name -> (D, n, train, val, test)
SHAPES = {
    "cellcycle_FUN": (77, 499, 1625, 848, 1281),
    "derisi_FUN": (63, 499, 1605, 842, 1272),
    "eisen_FUN": (79, 461, 1055, 529, 835),
    "expr_FUN": (551, 499, 1636, 849, 1288),
    "gasch1_FUN": (173, 499, 1631, 846, 1281),
    "gasch2_FUN": (52, 499, 1636, 849, 1288),
    "seq_FUN": (478, 499, 1692, 876, 1332),
    "spo_FUN": (80, 499, 1597, 837, 1263),
    "cellcycle_GO": (77, 4122, 1625, 848, 1281),
    "derisi_GO": (63, 4116, 1605, 842, 1272),
    "eisen_GO": (79, 3570, 1055, 528, 835),
    "expr_GO": (551, 4128, 1636, 849, 1288),
    "gasch1_GO": (173, 4122, 1631, 846, 1281),
    "gasch2_GO": (52, 4128, 1636, 849, 1288),
    "seq_GO": (478, 4130, 1692, 876, 1332),
    "spo_GO": (80, 4166, 1597, 837, 1263),
    "diatoms_others": (371, 398, 1085, 464, 1054),
    "enron_others": (1000, 56, 692, 296, 660),
    "ImCLEF07A_others": (80, 96, 7000, 3000, 1006),
    "ImCLEF07D_others": (80, 46, 7000, 3000, 1006),
}

FUNCAT = [k for k in HYPERPARAMS if k.endswith("_FUN")]


def hierarchy_kind(name: str) -> str:
    return "dag" if name.endswith("_GO") else "tree"
