"""Configuration validation and JSON round-tripping."""

import dataclasses

import pytest
from hypothesis import given, strategies as st

from tilesim.config import (BlockSizeInvalid, ConfigError, GeometryMismatch,
                            Latencies, NocWidthOutOfRange, SimConfig,
                            TopologyInvalid, standalone_config)


def test_defaults_validate():
    v = SimConfig().validate()
    assert v.num_tiles == 4
    assert v.chipset_node == 4
    assert v.l2_slice_bytes == 64 * 1024 // 4
    assert v.l1d_sets == 16 * 1024 // (4 * 64)


def test_standalone_is_single_tile():
    v = standalone_config().validate()
    assert v.num_tiles == 1
    assert v.cfg.latencies.memory == 20


def test_block_size_must_be_supported():
    with pytest.raises(BlockSizeInvalid):
        SimConfig(block_size_bytes=128).validate()
    with pytest.raises(BlockSizeInvalid):
        SimConfig(block_size_bytes=48).validate()
    for bs in (16, 32, 64):
        SimConfig(block_size_bytes=bs).validate()


def test_noc_width_range():
    with pytest.raises(NocWidthOutOfRange):
        SimConfig(noc_width_bits=32).validate()
    with pytest.raises(NocWidthOutOfRange):
        SimConfig(noc_width_bits=768).validate()
    with pytest.raises(NocWidthOutOfRange):
        SimConfig(noc_width_bits=100).validate()   # not a multiple of 8
    for w in (64, 704, 512):
        SimConfig(noc_width_bits=w).validate()


def test_topology_checks():
    with pytest.raises(TopologyInvalid):
        SimConfig(mesh_rows=0).validate()
    with pytest.raises(TopologyInvalid):
        SimConfig(chipset_attach=(5, 0)).validate()
    # interior attach point on a 3x3 mesh is not an edge
    with pytest.raises(TopologyInvalid):
        SimConfig(mesh_rows=3, mesh_cols=3, l2_total_size_bytes=9 * 4096,
                  chipset_attach=(1, 1)).validate()


def test_geometry_checks():
    with pytest.raises(GeometryMismatch):
        SimConfig(l1d_size_bytes=1000).validate()   # not a multiple of ways
    with pytest.raises(GeometryMismatch):
        SimConfig(l2_total_size_bytes=1 << 16 | 64).validate()
    with pytest.raises(GeometryMismatch):
        SimConfig(l1d_assoc=0).validate()
    with pytest.raises(GeometryMismatch):
        SimConfig(l1d_mshrs=0).validate()
    with pytest.raises(GeometryMismatch):
        SimConfig(vlen_bits=96).validate()
    with pytest.raises(GeometryMismatch):
        SimConfig(latencies=Latencies(l1_hit=0)).validate()
    SimConfig(latencies=Latencies(link=0)).validate()   # link 0 is legal


def test_mode_strings_checked():
    with pytest.raises(ConfigError):
        SimConfig(vsetvl_mode="speculative").validate()
    with pytest.raises(ConfigError):
        SimConfig(l2_sram_mode="pipelined").validate()


def test_json_round_trip_and_unknown_fields():
    cfg = SimConfig(mesh_rows=1, mesh_cols=2, l2_total_size_bytes=32 * 1024,
                    latencies=Latencies(memory=7))
    again = SimConfig.from_json_dict(cfg.to_json_dict())
    assert again == cfg
    with pytest.raises(ConfigError):
        SimConfig.from_json_dict({"mesh_rowz": 2})
    with pytest.raises(ConfigError):
        SimConfig.from_json_dict({"latencies": {"memroy": 3}})


def test_home_tile_interleaves_blocks():
    v = SimConfig().validate()
    bs = v.cfg.block_size_bytes
    homes = [v.home_tile(b * bs) for b in range(8)]
    assert homes == [0, 1, 2, 3, 0, 1, 2, 3]
    # all addresses in one block share a home
    assert v.home_tile(bs) == v.home_tile(2 * bs - 1)


def test_hit_latency_composition():
    par = SimConfig(l2_sram_mode="parallel").validate()
    ser = SimConfig(l2_sram_mode="serial").validate()
    lat = par.cfg.latencies
    assert par.l2_hit_latency() == max(lat.l2_tag, lat.l2_data)
    assert ser.l2_hit_latency() == lat.l2_tag + lat.l2_data
    assert par.l15_hit_latency() == lat.l15_hit
    assert ser.l15_hit_latency() == lat.l2_tag + lat.l15_hit


def test_vlmax():
    v = SimConfig(vlen_bits=128).validate()
    assert v.vlmax(8) == 16
    assert v.vlmax(64) == 2


@given(rows=st.integers(1, 3), cols=st.integers(1, 3),
       bs=st.sampled_from([16, 32, 64]),
       width=st.sampled_from([64, 128, 256, 512, 704]),
       seed=st.integers(0, 2**31))
def test_valid_configs_round_trip(rows, cols, bs, width, seed):
    cfg = SimConfig(mesh_rows=rows, mesh_cols=cols, block_size_bytes=bs,
                    noc_width_bits=width, rng_seed=seed,
                    l2_total_size_bytes=rows * cols * 16 * 1024)
    v = cfg.validate()
    assert v.num_tiles == rows * cols
    assert SimConfig.from_json_dict(cfg.to_json_dict()) == cfg
