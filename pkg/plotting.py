"""
Static Figures
Author: Integration Engineer (Person 4)

PNG figures of mass ledgers and comparison envelopes.
NOTE: matplotlib is imported ONLY inside the plotting functions
"""

from typing import Optional

import numpy as np


def _pyplot():
    """Headless pyplot - imported here so computational modules never load matplotlib"""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    return plt


def plot_ledger(ledger, path, title: Optional[str] = None) -> None:
    """Mass and identity residual against time on log axes"""
    plt = _pyplot()
    t = ledger.column('t')
    mass = ledger.column('mass')
    residual = ledger.column('identity_residual')

    fig, (ax_mass, ax_res) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    positive = mass > 0.0
    ax_mass.semilogy(t[positive], mass[positive], color='tab:blue', label='||u||^2')
    ax_mass.set_ylabel('mass')
    ax_mass.legend()
    ax_mass.grid(True, which='both', alpha=0.3)

    ax_res.semilogy(t[1:], np.maximum(residual[1:], 1e-300), color='tab:red')
    ax_res.set_xlabel('t')
    ax_res.set_ylabel('identity residual')
    ax_res.grid(True, which='both', alpha=0.3)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_envelope(ledger, env, floor=None, path='envelope.png',
                  title: Optional[str] = None) -> None:
    """Ledger mass between the upper envelope and the reverse-inequality floor"""
    plt = _pyplot()
    t = ledger.column('t')
    mass = ledger.column('mass')

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, mass, color='black', linewidth=2, label='ledger')
    ax.plot(t, env(t), color='tab:orange', linestyle='--',
            label=f"envelope ({env.kind})")
    if floor is not None:
        ax.plot(t, floor(t), color='tab:green', linestyle=':', label='floor')
        ax.axvline(floor.extinction_time, color='tab:green', alpha=0.4)
    ax.set_xlabel('t')
    ax.set_ylabel('||u(t)||^2')
    ax.legend()
    ax.grid(True, alpha=0.3)

    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
