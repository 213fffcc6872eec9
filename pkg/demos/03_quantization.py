"""How the shipped SiLU coder degrades when T, h and d are snapped to 2^Q levels.

Run:  python demos/03_quantization.py
"""

from fsconv import published_params
from fsconv.analysis import mse_vs_q

params = published_params("silu")
rows = mse_vs_q(params, "silu", range(2, 9), {"all": [(-8.0, 12.0)]})
base = rows[0]["mse"]
print(f"unquantized MSE on [-8,12]: {base:.5f}")
for row in rows[1:]:
    print(f"Q={row['q']}  MSE={row['mse']:.5f}  ratio={row['mse'] / base:7.2f}")

# Levels for different Q do not nest (the [-8, 8] grid has 2^Q points with both
# endpoints), so small Q can land parameters on luckier or unluckier values
# and the curve is only roughly monotone below Q=6.
