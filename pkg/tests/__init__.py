TEST_SEED = 1234
TEST_MATERIALS = ["pla", "abs", "petg", "nylon", "tpu"]
TEST_METHODS = ["injection", "vibrotactile", "E19", "E10", "E4", "E1"]

# reduced normal force grid of the small pipeline config [kPa]
SMALL_F_N_LO = 1.1
SMALL_F_N_HI = 1.9

# success rate, y [mm], F_N [kPa] of the stabilization achievement table
STABILIZATION_TABLE = {
    "no_action": (0.0, 2.48, 2.94),
    "vibrotactile": (0.3, 1.32, 5.96),
    "E1": (0.0, 0.89, 6.47),
    "E4": (0.1, 2.52, 3.59),
    "E10": (1.0, 1.55, 5.23),
    "E19": (0.8, 1.40, 6.24),
    "injection": (1.0, 1.38, 4.50),
}
SCORE_OURS = 8.216
SCORE_NO_ACTION = 0.437
