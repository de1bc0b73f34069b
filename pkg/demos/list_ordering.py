"""Why persistence ordering matters: publish a list node before its
contents are durable, then crash with only the head written back."""
from nvhalt.verify import enumerate_crash_points, linked_list_demo

if __name__ == "__main__":
    print("plain stores, head first   ->", "consistent" if linked_list_demo(False) else "dangling pointer")
    print("inside a transaction       ->", "consistent" if linked_list_demo(True) else "dangling pointer")
    print()
    for path in ("sw", "hw"):
        rep = enumerate_crash_points(path)
        print(f"{path} commit, crash at each persistence step:")
        for p in rep.points:
            print(f"  {p.step:3d} {p.point:<16} {'/'.join(sorted(p.outcomes))}")
        print(f"  all outcomes atomic: {rep.ok}\n")
