from components.rewrite_viewer import neighbourhood_figure


def test_neighbourhood_figure_draws_one_hop_entities(toy_kg):
    fig = neighbourhood_figure(toy_kg, "carson city")
    edges, nodes = fig.data
    assert sorted(nodes.text) == ["carson city", "nevada"]
    assert list(edges.x).count(None) == 1


def test_polysemous_surface_draws_every_meaning(toy_kg):
    fig = neighbourhood_figure(toy_kg, "bad romance")
    labels = list(fig.data[1].text)
    assert labels.count("bad romance") == 2
    assert "lady gaga" in labels
