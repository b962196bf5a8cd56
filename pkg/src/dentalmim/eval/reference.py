"""Published numbers, kept for display next to measured results; never used as gates."""

# (AP_box, AP_mask) in percent, teeth only
TEETH_RESULTS = {
    "Random": (75.7, 74.8),
    "Supervised": (79.1, 78.3),
    "UM-MAE": (84.5, 83.2),
    "SimMIM": (86.1, 84.6),
    "PANet": (75.4, 73.9),
}

# (AP_box, AP_mask) in percent, teeth and restorations
TEETH_AND_RESTORATION_RESULTS = {
    "Random": (77.0, 76.1),
    "Supervised": (80.3, 79.2),
    "UM-MAE": (88.3, 85.7),
    "SimMIM": (90.4, 88.9),
}

# (mask ratio %, pre-training epochs) -> (AP_box, AP_mask)
MASK_RATIO_RESULTS = {
    (60, 100): (84.3, 83.2),
    (50, 100): (84.7, 83.6),
    (50, 800): (83.1, 83.0),
    (40, 100): (85.5, 83.9),
    (30, 100): (85.9, 84.1),
    (20, 100): (86.1, 84.6),
    (10, 100): (85.8, 84.3),
}

# pre-training cost on the full-size setting
PRETRAIN_COST = {
    "simmim": {"hours": 24.6, "memory_gb": 18.7},
    "ummae": {"hours": 12.5, "memory_gb": 6.7},
}

INIT_ROW_NAMES = {"random": "Random", "supervised": "Supervised", "ummae": "UM-MAE", "simmim": "SimMIM"}
INIT_ORDER = ("random", "supervised", "ummae", "simmim")
