"""Grammar-constrained linear-chain CRF over link tags.

Transition, start, and end scores are learned, but entries the tag grammar
forbids are clamped to -inf before every use (hard masking), so forbidden
moves carry zero probability mass, gradients never flow into them, and
Viterbi output is grammatical by construction.  The mask can be disabled to
reproduce the unconstrained ablation; decoded sequences then need repair.

All scoring runs in log space with float64 tensors.  Viterbi runs in numpy
with first-occurrence argmax, so score ties resolve to the lowest tag index
at every backtrack step.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .scheme import LabelScheme, transition_mask

NEG_INF = float("-inf")


class LinkCRF(nn.Module):
    """Linear-chain CRF whose support is restricted to grammatical tag paths."""

    def __init__(self, scheme: LabelScheme, hard_mask: bool = True):
        super().__init__()
        self.scheme = scheme
        self.hard_mask = hard_mask
        n = scheme.n_tags
        self.transitions = nn.Parameter(torch.zeros(n, n, dtype=torch.float64))
        self.start = nn.Parameter(torch.zeros(n, dtype=torch.float64))
        self.end = nn.Parameter(torch.zeros(n, dtype=torch.float64))
        mask = transition_mask(scheme)
        # derivable from the scheme, so kept out of checkpoints
        self.register_buffer("allowed", torch.from_numpy(mask.allowed), persistent=False)
        self.register_buffer("start_allowed", torch.from_numpy(mask.start), persistent=False)
        self.register_buffer("end_allowed", torch.from_numpy(mask.end), persistent=False)

    def effective_scores(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(transition, start, end) scores with forbidden entries at -inf."""
        if not self.hard_mask:
            return self.transitions, self.start, self.end
        return (
            self.transitions.masked_fill(~self.allowed, NEG_INF),
            self.start.masked_fill(~self.start_allowed, NEG_INF),
            self.end.masked_fill(~self.end_allowed, NEG_INF),
        )

    def _check_emissions(self, emissions: torch.Tensor) -> None:
        if emissions.ndim != 2 or emissions.shape[0] < 1:
            raise ValueError("expected a non-empty (n, n_tags) emission matrix")
        if emissions.shape[1] != self.scheme.n_tags:
            raise ValueError(
                f"emission width {emissions.shape[1]} does not match "
                f"{self.scheme.n_tags} tags"
            )

    def path_score(self, emissions: torch.Tensor, tags: list[int]) -> torch.Tensor:
        """Unnormalized log score of one tag path; -inf if the mask forbids it."""
        self._check_emissions(emissions)
        if len(tags) != emissions.shape[0]:
            raise ValueError("tag path length does not match emissions")
        trans, start, end = self.effective_scores()
        idx = torch.as_tensor(tags, dtype=torch.long)
        score = start[idx[0]] + emissions[torch.arange(len(tags)), idx].sum() + end[idx[-1]]
        if len(tags) > 1:
            score = score + trans[idx[:-1], idx[1:]].sum()
        return score

    def log_partition(self, emissions: torch.Tensor) -> torch.Tensor:
        """log sum over all (grammatical, under the mask) paths."""
        self._check_emissions(emissions)
        trans, start, end = self.effective_scores()
        alpha = start + emissions[0]
        for t in range(1, emissions.shape[0]):
            alpha = torch.logsumexp(alpha.unsqueeze(1) + trans, dim=0) + emissions[t]
        return torch.logsumexp(alpha + end, dim=0)

    def is_grammatical(self, tags: list[int]) -> bool:
        if not tags:
            return False
        allowed = self.allowed.numpy()
        if not self.start_allowed[tags[0]] or not self.end_allowed[tags[-1]]:
            return False
        return all(allowed[a, b] for a, b in zip(tags, tags[1:]))

    def nll(self, emissions: torch.Tensor, tags: list[int]) -> torch.Tensor:
        """Negative log-likelihood of the gold path; always >= 0.

        With the hard mask on, an ungrammatical gold path would make the loss
        infinite, so it is rejected up front.
        """
        if self.hard_mask and not self.is_grammatical(tags):
            raise ValueError("gold tag path violates the transition grammar")
        return self.log_partition(emissions) - self.path_score(emissions, tags)

    def viterbi(self, emissions: torch.Tensor) -> tuple[list[int], float]:
        """Best path and its score; ties break to the lowest tag index."""
        self._check_emissions(emissions)
        trans, start, end = self.effective_scores()
        em = emissions.detach().numpy()
        trans_np = trans.detach().numpy()
        n = em.shape[0]
        score = start.detach().numpy() + em[0]
        back = np.zeros((n, em.shape[1]), dtype=np.int64)
        for t in range(1, n):
            cand = score[:, None] + trans_np  # (from, to)
            back[t] = np.argmax(cand, axis=0)
            score = cand[back[t], np.arange(em.shape[1])] + em[t]
        score = score + end.detach().numpy()
        best_last = int(np.argmax(score))
        path = [best_last]
        for t in range(n - 1, 0, -1):
            path.append(int(back[t, path[-1]]))
        path.reverse()
        return path, float(score[best_last])

    def marginals(self, emissions: torch.Tensor) -> torch.Tensor:
        """(n, n_tags) posterior tag marginals via forward-backward."""
        self._check_emissions(emissions)
        trans, start, end = self.effective_scores()
        n = emissions.shape[0]
        alphas = [start + emissions[0]]
        for t in range(1, n):
            alphas.append(
                torch.logsumexp(alphas[-1].unsqueeze(1) + trans, dim=0) + emissions[t]
            )
        betas = [end]
        for t in range(n - 2, -1, -1):
            betas.append(
                torch.logsumexp(trans + (emissions[t + 1] + betas[-1]).unsqueeze(0), dim=1)
            )
        betas.reverse()
        log_z = torch.logsumexp(alphas[-1] + betas[-1], dim=0)
        return torch.exp(torch.stack(alphas) + torch.stack(betas) - log_z)
