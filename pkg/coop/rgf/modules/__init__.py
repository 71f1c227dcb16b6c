from .attention import RGAttn, rg_attn_apply, rg_attn_multi
from .pyramid import PyramidFusion, pyramid_fuse, warp_to_ego
