"""
Parameter and FLOP budget
=========================

The reference configuration (ten groups, 15 selected Saab dims, depth-2
boosted trees with 100 trees each) counted two ways: with the rounded
per-classifier figures, and term by term.
"""

# %%
from greensteg.budget import audit, full_saab_flops, full_saab_params, full_tree_params, reference_shape

# %%
# Rounded convention: 1K parameters and 500 FLOPs per classifier.
paper = audit(reference_shape(), "paper")
print(paper.markdown())

# %%
# Term by term: complete trees have 3 internal nodes and 4 leaves,
# so 2*3 + 4 = 10 numbers each; with the base score a 100-tree model
# holds 1001.
exact = audit(reference_shape(), "exact")
print(exact.markdown())
print("full-tree params", full_tree_params(100, 2))

# %%
# Keeping only 15 of 83 Saab dims is where the saving comes from.
print(f"full Saab banks: {full_saab_params(10)} params, {full_saab_flops()} FLOPs/pixel")
print(f"selected:        {paper.params['saab_selected_taps']} taps, "
      f"{paper.flops_per_pixel['saab_selected']} FLOPs/pixel")
