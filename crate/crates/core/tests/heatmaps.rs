use dharq_core::analysis::{heatmap, heatmaps, BirthTimeDist, GridSpec, QuadratureConfig, Quantity, ScenarioCoop};
use dharq_core::units::Position;

#[test]
fn shared_field_matches_single_maps() {
    let coarse = GridSpec { nx: 10, ny: 8, ..GridSpec::default() };
    let q = QuadratureConfig { area_grid: coarse, table_step: 0.2, ..Default::default() };
    let sc = ScenarioCoop::canonical(Position::new(1.0, 1.0)).unwrap();
    let f = BirthTimeDist::uniform(sc.packet_duration());
    let all = heatmaps(&Quantity::ALL, &sc, &coarse, &f, &q).unwrap();
    for (quantity, cells) in Quantity::ALL.into_iter().zip(&all) {
        if matches!(quantity, Quantity::Interferer | Quantity::CoopPlus) {
            assert_eq!(*cells, heatmap(quantity, &sc, &coarse, &f, &q).unwrap(), "{quantity}");
        }
        assert_eq!(cells.len(), 80);
        assert!(cells.iter().flat_map(|c| c.value).all(|v| (0.0..=1.0).contains(&v)));
    }
}
