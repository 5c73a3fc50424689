import csv
import logging
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402
from scipy.special import rel_entr  # noqa: E402

from . import misc, oracle  # noqa: E402
from .agents import NON_CORRELATED, acting_as  # noqa: E402
from .errors import InvalidArgument, StorageError  # noqa: E402
from .game import UniformPolicy, episode_return, rollout  # noqa: E402

log = logging.getLogger('evaluation')

BANDWIDTH_FLOOR = 0.01
GRID_RESOLUTION = 101
GRID_MARGIN = 0.1
KL_FLOOR = 1e-12
EVAL_EPISODES = 100
EVAL_SAMPLES = 8
SVG_SALT = 'codail-lab'


############################################################
# POLICY TABLES (TABULAR GAMES)
############################################################

def state_observations(spec, agent):
    return np.stack([spec.observe(s, agent) for s in range(spec.n_states)])


def policy_tables(spec, agents, samples=None):
    """Per-agent action distribution at every state as the agents execute it.

    A correlated agent acts from sum_o sigma_i(o|s) pi_i(a|s,o); `samples=None` gives that
    mixture exactly, an integer K estimates it with K opponent draws.
    """
    tables = []
    for agent in agents:
        observations = state_observations(spec, agent.index)
        if agent.kind == NON_CORRELATED:
            with acting_as(agent.index):
                tables.append(agent.policy.distribution(observations))
        elif samples is None:
            with acting_as(agent.index):
                sigma = agent.opponent_model.joint_distribution(observations)
                tables.append(np.einsum('so,soa->sa', sigma, agent.policy.conditional_table(observations)))
        else:
            tables.append(agent.marginal(observations, samples=samples))
    return tables


def joint_action_table(spec, agents, agent=0):
    """Joint-action distribution per state as modeled by the learners.

    Correlated learners: agent i's own view sigma_i(a_-i|s) pi_i(a_i|s,a_-i).
    Non-correlated learners: the product of the per-agent tables.
    """
    learner = agents[agent]
    if learner.kind == NON_CORRELATED:
        return oracle.TabularJointPolicy.non_correlated(spec, policy_tables(spec, agents)).joint
    observations = state_observations(spec, agent)
    with acting_as(agent):
        sigma = learner.opponent_model.joint_distribution(observations)
        conditional = learner.policy.conditional_table(observations)
    return oracle.assemble(spec, agent, conditional, sigma)


def learner_joint_policy(spec, agents, samples=None):
    """The executed profile: agents sample independently, so it is the product of their tables."""
    return oracle.TabularJointPolicy.non_correlated(spec, policy_tables(spec, agents, samples))


def occupancy_divergence(spec, agents, demonstrator):
    """KL of the demonstrator occupancy to the learners' occupancy, both exact."""
    learned = oracle.exact_occupancy(spec, learner_joint_policy(spec, agents))
    return oracle.occupancy_kl(oracle.exact_occupancy(spec, demonstrator), learned)


def empirical_joint_table(spec, batch):
    """Joint-action frequencies per state of a recorded batch and the state visit weights.

    Unvisited states get a uniform row and zero weight.
    """
    counts = np.zeros((spec.n_states, spec.joint_index.size))
    for episode in batch.episodes:
        for transition in episode:
            counts[int(transition.state), spec.joint_index.index(transition.joint_action)] += 1.0
    visits = counts.sum(axis=1)
    table = np.full_like(counts, 1.0 / spec.joint_index.size)
    seen = visits > 0
    table[seen] = counts[seen] / visits[seen, None]
    total = visits.sum()
    return table, (visits / total if total > 0 else visits)


def joint_tv(spec, agents, reference_joint, weights, agent=0):
    """State-weighted total variation between the modeled joint of `agents` and a reference joint table."""
    modeled = joint_action_table(spec, agents, agent)
    weights = np.asarray(weights, dtype=np.float64)
    return float(sum(w * oracle.total_variation(modeled[s], reference_joint[s]) for s, w in enumerate(weights)))


############################################################
# REWARD GAPS
############################################################

def random_agents(spec):
    return [UniformPolicy(n) for n in spec.action_sizes]


def reward_groups(spec):
    teams = getattr(spec, 'teams', None)
    groups = dict(teams) if teams else {}
    groups['total'] = list(range(spec.agent_count))
    return groups


def return_statistics(spec, batch):
    """Mean and std of the undiscounted episode return per reward group."""
    return {group: misc.mean_std([episode_return(episode, members) for episode in batch.episodes])
            for group, members in reward_groups(spec).items()}


def reward_gap(spec, decision_makers, demo_statistics, episodes=EVAL_EPISODES, seeds=(0,), horizon=None, workers=1):
    """Per group, mean and std over seeds of |mean learned return - mean demonstrator return|."""
    gaps = {group: [] for group in reward_groups(spec)}
    for seed in seeds:
        batch = rollout(spec, decision_makers, episodes, seed, horizon=horizon, workers=workers, generator='evaluation')
        learned = return_statistics(spec, batch)
        for group in gaps:
            gaps[group].append(abs(learned[group][0] - demo_statistics[group][0]))
    return {group: misc.mean_std(values) for group, values in gaps.items()}


############################################################
# POSITION DENSITIES
############################################################

@dataclass(frozen=True)
class PositionSample:
    agent: int
    x: float
    y: float
    episode: int
    step: int


def collect_positions(spec, batch):
    """Positions of the movable agents at every recorded state."""
    movable = spec.movable_agents() if hasattr(spec, 'movable_agents') else range(spec.agent_count)
    samples = []
    for e, episode in enumerate(batch.episodes):
        for t, transition in enumerate(episode):
            for agent in movable:
                x, y = transition.state.positions[agent]
                samples.append(PositionSample(agent=agent, x=float(x), y=float(y), episode=e, step=t))
    return samples


def sample_array(samples, agent=None):
    return np.array([(s.x, s.y) for s in samples if agent is None or s.agent == agent], dtype=np.float64).reshape(-1, 2)


class Kde(stats.gaussian_kde):
    """2-D Gaussian KDE with a diagonal covariance: per-dimension Scott bandwidth, floored.

    Queries are (m, 2) arrays of positions.
    """

    def __init__(self, points, floor=BANDWIDTH_FLOOR):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if points.shape[0] < 2:
            raise InvalidArgument(f"density estimation needs at least 2 samples, got {points.shape[0]}")
        if not np.all(np.isfinite(points)):
            raise InvalidArgument("position samples must be finite")
        self.floor = floor
        super().__init__(points.T)

    # scipy >= 1.10 exposes inv_cov as a read-only property; keep it assignable here.
    @property
    def inv_cov(self):
        return self._inv_cov

    @inv_cov.setter
    def inv_cov(self, value):
        self._inv_cov = value

    def _compute_covariance(self):
        scott = np.std(self.dataset, axis=1, ddof=1) * self.n ** (-1.0 / (self.d + 4))
        if self.floor is None:
            if np.any(scott <= 0):
                raise InvalidArgument("degenerate samples (zero spread); fit with a bandwidth floor such as 0.01")
            self.bandwidth = scott
        else:
            self.bandwidth = np.maximum(scott, self.floor)
        self.factor = 1.0
        self.covariance = np.diag(self.bandwidth ** 2)
        self.inv_cov = np.diag(self.bandwidth ** -2)
        self.cho_cov = np.diag(self.bandwidth)
        self.log_det = 2.0 * np.sum(np.log(self.bandwidth * np.sqrt(2.0 * np.pi)))

    def __call__(self, query):
        query = np.atleast_2d(np.asarray(query, dtype=np.float64)).reshape(-1, 2)
        return self.evaluate(query.T)

    def grid(self, xs, ys):
        """Density on the grid, indexed [i, j] -> (xs[i], ys[j])."""
        gx, gy = np.meshgrid(xs, ys, indexing='ij')
        return self.evaluate(np.vstack([gx.ravel(), gy.ravel()])).reshape(len(xs), len(ys))


@dataclass
class DensityGrid:
    xs: np.ndarray
    ys: np.ndarray
    density: np.ndarray  # (len(xs), len(ys))
    bandwidth: tuple

    @property
    def cell_area(self):
        return float((self.xs[1] - self.xs[0]) * (self.ys[1] - self.ys[0]))

    @property
    def integral(self):
        return float(self.density.sum() * self.cell_area)

    @property
    def marginal_x(self):
        return self.density.sum(axis=1) * float(self.ys[1] - self.ys[0])

    @property
    def marginal_y(self):
        return self.density.sum(axis=0) * float(self.xs[1] - self.xs[0])

    def cells(self):
        """Cell masses normalized to sum to one."""
        total = self.density.sum()
        return self.density / total if total > 0 else np.full_like(self.density, 1.0 / self.density.size)


def grid_axes(half_width=1.0, resolution=GRID_RESOLUTION, margin=GRID_MARGIN):
    if resolution < 2:
        raise InvalidArgument(f"grid resolution must be at least 2, got {resolution}")
    extent = half_width * (1.0 + margin)
    axis = np.linspace(-extent, extent, resolution)
    return axis, axis.copy()


def kde_fit(points, floor=BANDWIDTH_FLOOR):
    return Kde(points, floor=floor)


def density_grid(points, half_width=1.0, resolution=GRID_RESOLUTION, floor=BANDWIDTH_FLOOR):
    kde = kde_fit(points, floor)
    xs, ys = grid_axes(half_width, resolution)
    return DensityGrid(xs=xs, ys=ys, density=kde.grid(xs, ys), bandwidth=tuple(float(h) for h in kde.bandwidth))


def kl_divergence(p_points, q_points, resolution=GRID_RESOLUTION, half_width=1.0, floor=BANDWIDTH_FLOOR):
    """KL(p || q) between two KDEs by grid quadrature with a floor on q."""
    p_points = np.asarray(p_points, dtype=np.float64).reshape(-1, 2)
    q_points = np.asarray(q_points, dtype=np.float64).reshape(-1, 2)
    if p_points.shape[0] == 0 or q_points.shape[0] == 0:
        raise InvalidArgument("KL divergence needs two nonempty sample sets")
    p = density_grid(p_points, half_width, resolution, floor).cells()
    q = density_grid(q_points, half_width, resolution, floor).cells()
    return float(np.sum(rel_entr(p, np.maximum(q, KL_FLOOR))))


def position_kl(spec, generated, demonstrated, resolution=GRID_RESOLUTION, floor=BANDWIDTH_FLOOR):
    """Per-agent KDE-KL of demonstrated to generated positions, their mean ('per') and the pooled value ('total')."""
    half_width = spec.config.half_width
    demo_samples = collect_positions(spec, demonstrated)
    gen_samples = collect_positions(spec, generated)
    per_agent = {}
    for agent in spec.movable_agents():
        per_agent[agent] = kl_divergence(sample_array(demo_samples, agent), sample_array(gen_samples, agent),
                                         resolution, half_width, floor)
    total = kl_divergence(sample_array(demo_samples), sample_array(gen_samples), resolution, half_width, floor)
    return {'per_agent': per_agent, 'per': float(np.mean(list(per_agent.values()))), 'total': total}


############################################################
# EXPORT
############################################################

def write_density_csv(grid, path):
    try:
        with open(path, 'w', newline='') as fp:
            writer = csv.writer(fp, lineterminator='\n')
            writer.writerow(['x', 'y', 'density'])
            for i, x in enumerate(grid.xs):
                for j, y in enumerate(grid.ys):
                    writer.writerow([repr(float(x)), repr(float(y)), repr(float(grid.density[i, j]))])
    except OSError as e:
        raise StorageError(f"cannot write density table {path}: {e}") from e
    return path


def read_density_csv(path):
    """Rebuild (xs, ys, density) from a density table."""
    try:
        with open(path, 'r', newline='') as fp:
            rows = list(csv.DictReader(fp))
    except OSError as e:
        raise StorageError(f"cannot read density table {path}: {e}") from e
    xs = sorted({float(row['x']) for row in rows})
    ys = sorted({float(row['y']) for row in rows})
    density = np.zeros((len(xs), len(ys)))
    x_index = {x: i for i, x in enumerate(xs)}
    y_index = {y: j for j, y in enumerate(ys)}
    for row in rows:
        density[x_index[float(row['x'])], y_index[float(row['y'])]] = float(row['density'])
    return np.array(xs), np.array(ys), density


def render_density_svg(grid, path, title=''):
    """600x600 px heatmap with marginal strips above and to the right."""
    plt.rcParams['svg.hashsalt'] = SVG_SALT
    figure = plt.figure(figsize=(7.2, 7.2), dpi=100)
    main = figure.add_axes([0.0, 0.0, 600 / 720, 600 / 720])
    top = figure.add_axes([0.0, 610 / 720, 600 / 720, 100 / 720], sharex=main)
    right = figure.add_axes([610 / 720, 0.0, 100 / 720, 600 / 720], sharey=main)
    main.pcolormesh(grid.xs, grid.ys, grid.density.T, shading='nearest', cmap='viridis')
    top.plot(grid.xs, grid.marginal_x, color='black', linewidth=1.0)
    right.plot(grid.marginal_y, grid.ys, color='black', linewidth=1.0)
    for axes in (top, right):
        axes.set_axis_off()
    if title:
        top.set_title(title, fontsize=9)
    try:
        figure.savefig(path, format='svg', metadata={'Date': None})
    except OSError as e:
        raise StorageError(f"cannot write density plot {path}: {e}") from e
    finally:
        plt.close(figure)
    return path


def export_density(samples, output_dir, half_width=1.0, resolution=GRID_RESOLUTION, floor=BANDWIDTH_FLOOR, prefix='density'):
    """Write per-agent and all-agent density grids as CSV and SVG; returns {name: DensityGrid}."""
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create output directory {output_dir}: {e}") from e
    groups = {f'agent{agent}': sample_array(samples, agent) for agent in sorted({s.agent for s in samples})}
    groups['all'] = sample_array(samples)
    grids = {}
    for name, points in groups.items():
        grid = density_grid(points, half_width, resolution, floor)
        write_density_csv(grid, os.path.join(output_dir, f'{prefix}_{name}.csv'))
        render_density_svg(grid, os.path.join(output_dir, f'{prefix}_{name}.svg'), title=name)
        grids[name] = grid
    log.info(f"Exported {len(grids)} density grid(s) to {output_dir}")
    return grids
