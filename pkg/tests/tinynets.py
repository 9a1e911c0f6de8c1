"""Tiny double-precision fixture networks for gradient verification."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from gendistill.arch import ForwardOutputs


class TinyMatcher(nn.Module):
    """2-layer matcher for 8x8 single-channel inputs, K=2 logits.

    Tap = the post-conv activation, so both loss terms see gradients.
    """

    def __init__(self, seed=0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.conv = nn.Conv2d(1, 4, 3, padding=1)
            self.head = nn.Linear(4 * 4 * 4, 2)
        self.double()

    def forward_with_features(self, x):
        feat = torch.relu(self.conv(x))
        pooled = F.avg_pool2d(feat, 2)  # 8 -> 4
        return ForwardOutputs(self.head(pooled.flatten(1)), feat)

    def forward(self, x):
        return self.forward_with_features(x).logits


class TinyDisc(nn.Module):
    """Label-free critic for 8x8 inputs with scores in (0, 1)."""

    def __init__(self, seed=0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.conv = nn.Conv2d(1, 4, 3, padding=1)
            self.head = nn.Linear(4, 1)
        self.double()

    def forward(self, x):
        h = torch.relu(self.conv(x)).mean(dim=(2, 3))
        return torch.sigmoid(self.head(h)).view(-1)


def fixture_total_loss(synth, real, matcher, disc, omega_g, omega_l):
    """L_total as a differentiable function of the synthetic images."""
    from gendistill.distill import global_loss, local_loss, total_loss

    out_s = matcher.forward_with_features(synth)
    out_t = matcher.forward_with_features(real)
    g = global_loss(out_s.logits, out_t.logits.detach())
    l = local_loss(out_s.features, out_t.features.detach())
    scores = disc(synth)
    cgan = F.binary_cross_entropy(scores, torch.ones_like(scores))
    return total_loss(g, l, cgan, omega_g, omega_l)
