"""Tour of the stochastic channels and benchmark worlds.

Walks through every channel kind the library ships: exact discrete tables,
linear-Gaussian corruption, prototype collapse (the mode-collapse model),
mixtures of the two, and composition. Ends with the three named world
presets and a measurement of how often the collapse-heavy generator
actually collapses.
"""

import numpy as np

from chainviews import (
    DiscreteChannel,
    LinearGaussianChannel,
    MixtureChannel,
    Port,
    PrototypeCollapseChannel,
    PRESET_NAMES,
    ViewSpec,
    compose,
    derive_rng,
    discrete_view,
    generate_benchmark,
    lossy_world_preset,
    sample_channel,
    vector_view,
)

rng = derive_rng(0, "channel-tour")

print("== discrete channels ==")
sym_in = Port(ViewSpec("discrete", 2), "u")
sym_out = Port(ViewSpec("discrete", 2), "v")
flip = DiscreteChannel(np.array([[0.9, 0.1], [0.1, 0.9]]), sym_in, sym_out)
msg = discrete_view([0, 0, 1, 1, 0], "u")
out = sample_channel(flip, msg, rng)
print(f"input symbols  {msg.data.tolist()}")
print(f"after 10% flip {out.data.tolist()}")

twice = compose([flip, DiscreteChannel(np.array([[0.9, 0.1], [0.1, 0.9]]), sym_out, sym_out)])
print(f"two flips composed: effective matrix row 0 = {twice.stages[0].matrix[0] @ twice.stages[1].matrix}")

print()
print("== vector channels ==")
vec_u = Port(ViewSpec("vector", 2), "u")
vec_v = Port(ViewSpec("vector", 2), "v")
blur = LinearGaussianChannel(np.eye(2), np.zeros(2), 0.3, vec_u, vec_v)
point = vector_view([1.0, -1.0], "u")
samples = np.stack([sample_channel(blur, point, rng).data for _ in range(500)])
print(f"identity + noise 0.3: sample mean {samples.mean(axis=0).round(3)}, std {samples.std(axis=0).round(3)}")

protos = np.array([[2.0, 2.0], [-2.0, -2.0]])
snap = PrototypeCollapseChannel(protos, temperature=1.0, jitter_sigma=0.05, in_port=vec_u, out_port=vec_v)
near_point = vector_view([1.0, 0.5], "u")
snapped = np.stack([sample_channel(snap, near_point, rng).data for _ in range(500)])
near_first = np.abs(snapped - protos[0]).max(axis=1) < 0.5
print(f"prototype collapse: {near_first.mean():.0%} of samples snap to the nearer prototype")

mixed = MixtureChannel(0.5, snap, blur)
print(f"mixture channel: 50% collapse branch, 50% faithful branch ({type(mixed).__name__})")

print()
print("== world presets ==")
for name in PRESET_NAMES:
    world, g_uv, g_vu = lossy_world_preset(name, seed=0)
    instances, schema = generate_benchmark(world, 2, g_uv.out_port.spec)
    print(
        f"{name:15s} classes={world.class_count} u_dim={world.u_dim} "
        f"v_dim={g_uv.out_port.spec.size} instances={len(instances)}"
    )

world, g_uv, _ = lossy_world_preset("collapse-heavy", seed=0)
collapse = g_uv.a if isinstance(g_uv.a, PrototypeCollapseChannel) else g_uv.b
hits = 0
n = 2000
for i in range(n):
    label = int(rng.integers(world.class_count))
    u = world.class_means[label] + world.within_class_sigma * rng.standard_normal(world.u_dim)
    v = sample_channel(g_uv, vector_view(u, "u"), rng).data
    dist = np.sqrt(((v - collapse.prototypes) ** 2).sum(axis=1)).min()
    hits += dist <= 2.0 * collapse.jitter_sigma * np.sqrt(collapse.prototypes.shape[1])
print(f"collapse-heavy: {hits / n:.0%} of generated views land on a shared prototype")
print("those views carry no label signal; filtering them out is the whole game")
