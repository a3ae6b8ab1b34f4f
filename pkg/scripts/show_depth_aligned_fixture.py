"""Print BEV and image IoUs and label states of the shipped depth-aligned fixture."""
from mlod.labeling import assign_labels
from mlod.synth import depth_aligned_fixture, view_ious


def main():
    fx = depth_aligned_fixture()
    names = list(fx.proposals)
    labels = assign_labels([fx.proposals[n] for n in names], [fx.gt], fx.calib, fx.image_size)
    print("proposal  bev_iou  img_iou  bev_state  img_state")
    for i, name in enumerate(names):
        bev, img = view_ious(fx.proposals[name], fx.gt.box, fx.calib, fx.image_size)
        print(f"{name:<9} {bev:7.4f}  {img:7.4f}  {labels.bev[i].state:>9}  {labels.img[i].state:>9}")


if __name__ == "__main__":
    main()
